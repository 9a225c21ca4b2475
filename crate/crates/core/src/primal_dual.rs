//! Decentralised primal-dual dynamics, discretised with explicit Euler.
//!
//! Users move demand along `k^q_ij (f_ij - p_j)` with `f_ij = c_ij u_i'(x_i)`,
//! providers move prices along `k^p_j (sum_i q_ij - Q_j)`, and both are
//! projected so that a variable sitting at zero cannot be pushed negative.
//! All coordinates are updated simultaneously from the pre-step state.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{effective_resource, DemandMatrix, GameInstance, PriceVector};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Relaxation rates used by [`PdRates::calibrated`] when not overridden.
pub const CALIBRATED_DEMAND_RATE: f64 = 20.0;
pub const CALIBRATED_PRICE_RATE: f64 = 5.0;

/// `x` when `y > 0`, otherwise `max(0, x)`.
pub fn projected_rate(x: f64, y: f64) -> f64 {
    if y > 0.0 {
        x
    } else {
        x.max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdRates {
    /// Demand update rates, row-major `I x J`.
    pub kq: Vec<f64>,
    /// Price update rates.
    pub kp: Vec<f64>,
}

impl PdRates {
    pub fn new(kq: Vec<f64>, kp: Vec<f64>) -> Result<Self> {
        if kq.iter().chain(&kp).any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(Error::InvalidParameter(
                "update rates must be positive".into(),
            ));
        }
        Ok(Self { kq, kp })
    }

    pub fn uniform(users: usize, providers: usize) -> Self {
        Self {
            kq: vec![1.0; users * providers],
            kp: vec![1.0; providers],
        }
    }

    /// `k^q = 1` and `k^p` uniform on `[0.5, 1.5]`, deterministic in `seed`.
    pub fn random(users: usize, providers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            kq: vec![1.0; users * providers],
            kp: (0..providers).map(|_| rng.gen_range(0.5..1.5)).collect(),
        }
    }

    /// Rates scaled to the linearisation at a reference equilibrium, so the
    /// demand and price modes of every provider relax at roughly
    /// `demand_rate` and `price_rate` per unit time.
    ///
    /// With `s_ij = c_ij^2 |u_i''(x*_i)|` and `D_j = sum_{i: q*_ij > 0} 1/s_ij`
    /// (the slope of provider `j`'s aggregate demand in its price),
    /// `k^q_ij = demand_rate D_j / n_j` and `k^p_j = price_rate U_j / D_j`
    /// with `U_j` uniform on `[0.5, 1.5]`, deterministic in `seed`.
    pub fn calibrated(
        instance: &GameInstance,
        q_star: &DemandMatrix,
        demand_rate: f64,
        price_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let (users, providers) = (instance.users(), instance.providers());
        let x: Vec<f64> = (0..users)
            .map(|i| effective_resource(q_star.row(i), instance.c_row(i)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kq = vec![0.0; users * providers];
        let mut kp = Vec::with_capacity(providers);
        for j in 0..providers {
            let buyers: Vec<usize> = (0..users).filter(|&i| q_star[(i, j)] > 0.0).collect();
            if buyers.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "provider {j} sells nothing at the reference point"
                )));
            }
            let slope: f64 = buyers
                .iter()
                .map(|&i| {
                    let c = instance.c(i, j);
                    1.0 / (c * c * instance.utility(i).second_derivative(x[i]).abs())
                })
                .sum();
            for i in 0..users {
                kq[i * providers + j] = demand_rate * slope / buyers.len() as f64;
            }
            kp.push(price_rate * rng.gen_range(0.5..1.5) / slope);
        }
        Self::new(kq, kp)
    }

    pub fn kq(&self, i: usize, j: usize) -> f64 {
        self.kq[i * self.kp.len() + j]
    }

    fn check(&self, instance: &GameInstance) -> Result<()> {
        if self.kq.len() != instance.users() * instance.providers()
            || self.kp.len() != instance.providers()
        {
            return Err(Error::InvalidParameter(
                "update rate dimensions do not match the instance".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdState {
    pub q: DemandMatrix,
    pub p: PriceVector,
    pub t: f64,
}

impl PdState {
    /// No demand, every price at `price`.
    pub fn initial(instance: &GameInstance, price: f64) -> Self {
        Self {
            q: DemandMatrix::zeros(instance.users(), instance.providers()),
            p: vec![price; instance.providers()],
            t: 0.0,
        }
    }
}

/// On-disk JSON form of a [`PdState`]; `q` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    #[serde(rename = "I")]
    pub users: usize,
    #[serde(rename = "J")]
    pub providers: usize,
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub converged: bool,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdConfig {
    pub eta: f64,
    /// Stop once `|sum_i q_ij - Q_j| <= epsilon * Q_j` for every provider and
    /// the projected demand drift is below `epsilon * max_j p_j`.
    pub epsilon: f64,
    pub max_steps: usize,
    pub sample_stride: usize,
    /// Bound on the magnitude of any update direction, so an unbounded
    /// marginal utility at zero still yields a finite Euler step.
    pub direction_cap: f64,
    /// Uniform starting price (demand starts at zero).
    pub initial_price: f64,
}

impl Default for PdConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            epsilon: 1e-2,
            max_steps: 200_000,
            sample_stride: 1,
            direction_cap: 1e3,
            initial_price: 0.0,
        }
    }
}

impl PdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidParameter(
                "sample stride must be at least 1".into(),
            ));
        }
        if self.direction_cap.is_nan()
            || self.direction_cap <= 0.0
            || self.initial_price.is_nan()
            || self.initial_price < 0.0
        {
            return Err(Error::InvalidParameter(
                "direction cap must be positive and initial price nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// `f_ij = c_ij u_i'(x_i)` for every user and provider.
pub fn marginal_utilities(instance: &GameInstance, q: &DemandMatrix) -> Vec<f64> {
    let mut f = Vec::with_capacity(instance.users() * instance.providers());
    for i in 0..instance.users() {
        let marginal = instance
            .utility(i)
            .marginal(effective_resource(q.row(i), instance.c_row(i)));
        f.extend(instance.c_row(i).iter().map(|c| c * marginal));
    }
    f
}

/// `sum_i q_ij - Q_j` per provider.
pub fn clearing_residual(state: &PdState, instance: &GameInstance) -> Vec<f64> {
    (0..instance.providers())
        .map(|j| state.q.column_sum(j) - instance.supply()[j])
        .collect()
}

/// Largest projected demand drift `|(f_ij - p_j)^+_{q_ij}|`.
pub fn max_demand_drift(state: &PdState, instance: &GameInstance, direction_cap: f64) -> f64 {
    let f = marginal_utilities(instance, &state.q);
    let providers = instance.providers();
    f.iter()
        .enumerate()
        .map(|(k, f)| {
            let dir = (f - state.p[k % providers]).clamp(-direction_cap, direction_cap);
            projected_rate(dir, state.q.as_flat()[k]).abs()
        })
        .fold(0.0, f64::max)
}

/// One explicit Euler step of the projected dynamics.
pub fn pd_step(
    state: &PdState,
    instance: &GameInstance,
    rates: &PdRates,
    eta: f64,
    direction_cap: f64,
) -> PdState {
    let providers = instance.providers();
    let f = marginal_utilities(instance, &state.q);
    let mut q = state.q.clone();
    for i in 0..instance.users() {
        for j in 0..providers {
            let current = state.q[(i, j)];
            let dir = (f[i * providers + j] - state.p[j]).clamp(-direction_cap, direction_cap);
            let rate = rates.kq(i, j) * projected_rate(dir, current);
            q[(i, j)] = (current + eta * rate).max(0.0);
        }
    }
    let residual = clearing_residual(state, instance);
    let p = state
        .p
        .iter()
        .zip(&residual)
        .zip(&rates.kp)
        .map(|((&p, &r), &k)| {
            let dir = r.clamp(-direction_cap, direction_cap);
            (p + eta * k * projected_rate(dir, p)).max(0.0)
        })
        .collect();
    PdState {
        q,
        p,
        t: state.t + eta,
    }
}

/// Closed form of `sum (1/k^q) int_0^q (b - q*) db + sum (1/k^p) int_0^p (b - p*) db`.
pub fn la_salle_value(
    state: &PdState,
    q_star: &DemandMatrix,
    p_star: &[f64],
    rates: &PdRates,
) -> f64 {
    let demand: f64 = state
        .q
        .as_flat()
        .iter()
        .zip(q_star.as_flat())
        .zip(&rates.kq)
        .map(|((q, qs), k)| ((q - qs).powi(2) - qs * qs) / (2.0 * k))
        .sum();
    let price: f64 = state
        .p
        .iter()
        .zip(p_star)
        .zip(&rates.kp)
        .map(|((p, ps), k)| ((p - ps).powi(2) - ps * ps) / (2.0 * k))
        .sum();
    demand + price
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// NaN when no reference equilibrium was supplied.
    pub v: f64,
    pub residuals: Vec<f64>,
    pub max_drift: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    /// Writes `t,V,res_1..res_J,p_1..p_J,q_1_1..q_I_J` with 17 significant
    /// digits per value.
    pub fn write_csv<W: Write>(&self, users: usize, providers: usize, mut out: W) -> Result<()> {
        let mut header = vec!["t".to_string(), "V".to_string()];
        header.extend((1..=providers).map(|j| format!("res_{j}")));
        header.extend((1..=providers).map(|j| format!("p_{j}")));
        for i in 1..=users {
            header.extend((1..=providers).map(|j| format!("q_{i}_{j}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for s in &self.samples {
            let row: Vec<String> = [s.t, s.v]
                .iter()
                .chain(&s.residuals)
                .chain(&s.p)
                .chain(&s.q)
                .map(|v| format_f64(*v))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn v_values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.v).collect()
    }
}

/// Scientific notation with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdOutcome {
    pub trajectory: Trajectory,
    pub state: PdState,
    /// Steps taken; equals the iteration count to convergence when
    /// `converged` is set.
    pub steps: usize,
    pub converged: bool,
}

impl PdOutcome {
    pub fn to_record(&self) -> StateRecord {
        StateRecord {
            users: self.state.q.users(),
            providers: self.state.q.providers(),
            t: self.state.t,
            q: self.state.q.as_flat().to_vec(),
            p: self.state.p.clone(),
            converged: self.converged,
            steps: self.steps,
        }
    }
}

fn converged(state: &PdState, instance: &GameInstance, cfg: &PdConfig) -> (bool, Vec<f64>, f64) {
    let residuals = clearing_residual(state, instance);
    let drift = max_demand_drift(state, instance, cfg.direction_cap);
    let clears = residuals
        .iter()
        .zip(instance.supply())
        .all(|(r, q)| r.abs() <= cfg.epsilon * q);
    let price_scale = state.p.iter().fold(0.0f64, |m, p| m.max(*p));
    (
        clears && drift <= cfg.epsilon * price_scale,
        residuals,
        drift,
    )
}

/// Iterates [`pd_step`] from `start` until the clearing and drift tests hold
/// or `max_steps` is exhausted. Pass the equilibrium as `reference` to record
/// the La Salle function along the way.
pub fn run_primal_dual_from(
    instance: &GameInstance,
    rates: &PdRates,
    cfg: &PdConfig,
    start: PdState,
    reference: Option<(&DemandMatrix, &[f64])>,
) -> Result<PdOutcome> {
    cfg.validate()?;
    rates.check(instance)?;
    let mut trajectory = Trajectory::default();
    let record = |state: &PdState, residuals: Vec<f64>, drift: f64, traj: &mut Trajectory| {
        let v = reference.map_or(f64::NAN, |(qs, ps)| la_salle_value(state, qs, ps, rates));
        traj.samples.push(Sample {
            t: state.t,
            q: state.q.as_flat().to_vec(),
            p: state.p.clone(),
            v,
            residuals,
            max_drift: drift,
        });
    };

    let mut state = start;
    let mut steps = 0;
    loop {
        let (done, residuals, drift) = converged(&state, instance, cfg);
        let at_end = done || steps == cfg.max_steps;
        if steps % cfg.sample_stride == 0 || at_end {
            record(&state, residuals, drift, &mut trajectory);
        }
        if at_end {
            return Ok(PdOutcome {
                trajectory,
                state,
                steps,
                converged: done,
            });
        }
        state = pd_step(&state, instance, rates, cfg.eta, cfg.direction_cap);
        steps += 1;
    }
}

/// Runs from zero demand and uniform prices `cfg.initial_price`.
pub fn run_primal_dual(
    instance: &GameInstance,
    rates: &PdRates,
    cfg: &PdConfig,
    reference: Option<(&DemandMatrix, &[f64])>,
) -> Result<PdOutcome> {
    let start = PdState::initial(instance, cfg.initial_price);
    run_primal_dual_from(instance, rates, cfg, start, reference)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateCheckReport {
    /// `k^q_ij c_ij 1{q*_ij > 0}`, row-major `I x J`.
    pub b: Vec<f64>,
    /// Diagonal of `D`, `D_jj = k^p_j sum_{i: q*_ij > 0} k^q_ij`.
    pub d: Vec<f64>,
    /// Numerical rank of `[B; BD; ...; BD^(J-1)]`.
    pub stacked_rank: usize,
    /// `D_jj` pairwise distinct.
    pub refined_condition: bool,
    pub every_provider_has_decided_user: bool,
    pub sufficient: bool,
}

/// Checks whether the update rates rule out non-equilibrium limit behaviour
/// on the invariant set: either every provider has a decided user, or the
/// stacked matrix has full column rank.
pub fn rate_condition_check(
    instance: &GameInstance,
    q_star: &DemandMatrix,
    rates: &PdRates,
) -> Result<RateCheckReport> {
    rates.check(instance)?;
    let (users, providers) = (instance.users(), instance.providers());
    let active = |i: usize, j: usize| q_star[(i, j)] > 0.0;

    let b = DMatrix::from_fn(users, providers, |i, j| {
        if active(i, j) {
            rates.kq(i, j) * instance.c(i, j)
        } else {
            0.0
        }
    });
    let d: Vec<f64> = (0..providers)
        .map(|j| {
            rates.kp[j]
                * (0..users)
                    .filter(|&i| active(i, j))
                    .map(|i| rates.kq(i, j))
                    .sum::<f64>()
        })
        .collect();

    let mut stacked = DMatrix::zeros(users * providers, providers);
    let mut block = b.clone();
    for k in 0..providers {
        stacked
            .view_mut((k * users, 0), (users, providers))
            .copy_from(&block);
        for (j, dj) in d.iter().enumerate() {
            let mut col = block.column_mut(j);
            col *= *dj;
        }
    }
    let singular = stacked.singular_values();
    let largest = singular.iter().fold(0.0f64, |m, s| m.max(*s));
    let stacked_rank = singular.iter().filter(|s| **s > RANK_TOL * largest).count();

    let refined_condition = (0..providers).all(|a| {
        (a + 1..providers).all(|b| (d[a] - d[b]).abs() > 1e-12 * d[a].abs().max(d[b].abs()))
    });
    let every_provider_has_decided_user = (0..providers).all(|j| {
        (0..users).any(|i| active(i, j) && (0..providers).filter(|&k| active(i, k)).count() == 1)
    });
    Ok(RateCheckReport {
        b: b.transpose().as_slice().to_vec(),
        d,
        stacked_rank,
        refined_condition,
        every_provider_has_decided_user,
        sufficient: every_provider_has_decided_user || stacked_rank == providers,
    })
}
