//! Convergence sweeps over random instances and equilibrium association
//! snapshots, emitted as plot-ready CSV and JSON.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bgr::detect_loop;
use crate::error::{Error, Result};
use crate::model::{generate_instance, ChannelModelConfig, GameInstance, UtilityFunction};
use crate::primal_dual::{
    format_f64, run_primal_dual, PdConfig, PdRates, CALIBRATED_DEMAND_RATE, CALIBRATED_PRICE_RATE,
};
use crate::swo::{solve_equilibrium, verify_kkt, PriceOptions};

/// How update rates are chosen for each trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMode {
    /// [`PdRates::calibrated`] around the trial's equilibrium.
    Calibrated,
    /// [`PdRates::random`].
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub providers: usize,
    pub user_counts: Vec<usize>,
    pub trials: usize,
    pub epsilon: f64,
    pub eta: f64,
    pub max_steps: usize,
    pub base_seed: u64,
    pub channel: ChannelModelConfig,
    pub utility: UtilityFunction,
    pub rates: RateMode,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.providers == 0 || self.user_counts.is_empty() || self.user_counts.contains(&0) {
            return Err(Error::InvalidParameter(
                "sweep needs at least one provider and positive user counts".into(),
            ));
        }
        self.channel.validate()?;
        PdConfig {
            eta: self.eta,
            epsilon: self.epsilon,
            ..Default::default()
        }
        .validate()
    }
}

/// Outcome of one trial. `iterations` is `None` when the solver or the
/// dynamics failed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub users: usize,
    pub trial: usize,
    pub seed: u64,
    pub iterations: Option<usize>,
    pub undecided: Option<usize>,
    /// Final state passes the KKT check at `10 * epsilon`.
    pub kkt_ok: bool,
    pub loop_detected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub providers: usize,
    pub users: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub mean_iters: f64,
    pub std_iters: f64,
    pub failures: usize,
    pub mean_undecided: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepStats {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialResult>,
}

impl SweepStats {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "J,I,epsilon,trials,mean_iters,std_iters,failures,mean_undecided"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.providers,
                r.users,
                format_f64(r.epsilon),
                r.trials,
                format_f64(r.mean_iters),
                format_f64(r.std_iters),
                r.failures,
                format_f64(r.mean_undecided)
            )?;
        }
        Ok(())
    }
}

/// Runs one trial: generate, solve, then simulate the dynamics from zero
/// demand and zero prices.
pub fn run_trial(cfg: &SweepConfig, users: usize, trial: usize) -> TrialResult {
    let seed = cfg.base_seed.wrapping_add(trial as u64);
    let mut result = TrialResult {
        users,
        trial,
        seed,
        iterations: None,
        undecided: None,
        kkt_ok: false,
        loop_detected: false,
    };
    let Ok(instance) = generate_instance(&cfg.channel, users, cfg.providers, cfg.utility, seed)
    else {
        return result;
    };
    let eq = match solve_equilibrium(&instance, &PriceOptions::default()) {
        Ok(eq) => eq,
        Err(Error::LoopDetected { .. }) => {
            result.loop_detected = true;
            return result;
        }
        Err(_) => return result,
    };
    result.undecided = Some(eq.undecided.len());
    let rates = match cfg.rates {
        RateMode::Calibrated => {
            match PdRates::calibrated(
                &instance,
                &eq.q,
                CALIBRATED_DEMAND_RATE,
                CALIBRATED_PRICE_RATE,
                seed,
            ) {
                Ok(r) => r,
                Err(_) => return result,
            }
        }
        RateMode::Random => PdRates::random(users, cfg.providers, seed),
    };
    let pd = PdConfig {
        eta: cfg.eta,
        epsilon: cfg.epsilon,
        max_steps: cfg.max_steps,
        sample_stride: cfg.max_steps.max(1),
        ..Default::default()
    };
    if let Ok(out) = run_primal_dual(&instance, &rates, &pd, None) {
        if out.converged {
            result.iterations = Some(out.steps);
            result.kkt_ok =
                verify_kkt(&instance, &out.state.q, &out.state.p, 10.0 * cfg.epsilon).passed;
        }
    }
    result
}

/// Runs every `(I, trial)` pair in parallel; trial `t` uses seed
/// `base_seed + t`. Results are gathered in trial order before aggregation.
pub fn run_convergence_sweep(cfg: &SweepConfig) -> Result<SweepStats> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.user_counts.len());
    let mut trials = Vec::with_capacity(cfg.user_counts.len() * cfg.trials);
    for &users in &cfg.user_counts {
        let results: Vec<TrialResult> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, users, t))
            .collect();
        rows.push(aggregate(cfg, users, &results));
        trials.extend(results);
    }
    Ok(SweepStats { rows, trials })
}

fn aggregate(cfg: &SweepConfig, users: usize, results: &[TrialResult]) -> SweepRow {
    let iters: Vec<f64> = results
        .iter()
        .filter_map(|r| r.iterations.map(|n| n as f64))
        .collect();
    let (mean_iters, std_iters) = mean_std(&iters);
    let undecided: Vec<f64> = results
        .iter()
        .filter_map(|r| r.undecided.map(|n| n as f64))
        .collect();
    SweepRow {
        providers: cfg.providers,
        users,
        epsilon: cfg.epsilon,
        trials: results.len(),
        mean_iters,
        std_iters,
        failures: results.len() - iters.len(),
        mean_undecided: mean_std(&undecided).0,
    }
}

/// Mean and population standard deviation; NaN for an empty sample.
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserAssociation {
    pub user: usize,
    pub preference: Vec<usize>,
    pub purchases: Vec<f64>,
    pub effective_resource: f64,
    pub purchases_nothing: bool,
    pub undecided: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderAssociation {
    pub provider: usize,
    pub price: f64,
    pub sold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationReport {
    pub users: Vec<UserAssociation>,
    pub providers: Vec<ProviderAssociation>,
    /// Purchasing `(user, provider, q, c)` edges.
    pub edges: Vec<(usize, usize, f64, f64)>,
    pub undecided_count: usize,
    pub loop_found: bool,
}

impl AssociationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_edges_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "user,provider,q,c")?;
        for (i, j, q, c) in &self.edges {
            writeln!(out, "{i},{j},{},{}", format_f64(*q), format_f64(*c))?;
        }
        Ok(())
    }
}

/// Solves `instance` and reports who buys what from whom.
pub fn equilibrium_snapshot(instance: &GameInstance) -> Result<AssociationReport> {
    let eq = solve_equilibrium(instance, &PriceOptions::default())?;
    let users = (0..instance.users())
        .map(|i| UserAssociation {
            user: i,
            preference: eq.preference_sets[i].clone(),
            purchases: eq.q.row(i).to_vec(),
            effective_resource: eq.x[i],
            purchases_nothing: eq.q.row(i).iter().all(|q| *q == 0.0),
            undecided: eq.undecided.contains(&i),
        })
        .collect();
    let providers = (0..instance.providers())
        .map(|j| ProviderAssociation {
            provider: j,
            price: eq.p[j],
            sold: eq.q.column_sum(j),
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..instance.users() {
        for j in 0..instance.providers() {
            if eq.q[(i, j)] > 0.0 {
                edges.push((i, j, eq.q[(i, j)], instance.c(i, j)));
            }
        }
    }
    let loop_found = eq
        .undecided_graph(instance)
        .map(|g| detect_loop(&g).is_some())
        .unwrap_or(false);
    Ok(AssociationReport {
        users,
        providers,
        edges,
        undecided_count: eq.undecided.len(),
        loop_found,
    })
}

/// A sweep configuration with the default channel and utility.
pub fn default_sweep(providers: usize, user_counts: Vec<usize>, trials: usize) -> SweepConfig {
    SweepConfig {
        providers,
        user_counts,
        trials,
        epsilon: 1e-2,
        eta: 1e-3,
        max_steps: 100_000,
        base_seed: 0,
        channel: ChannelModelConfig::default(),
        utility: UtilityFunction::scaled_log(crate::model::DEFAULT_WEIGHT)
            .expect("default weight is valid"),
        rates: RateMode::Calibrated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trial_has_zero_spread() {
        let cfg = default_sweep(5, vec![20], 1);
        let stats = run_convergence_sweep(&cfg).unwrap();
        let row = &stats.rows[0];
        assert_eq!(row.trials, 1);
        assert_eq!(row.failures, 0);
        assert_eq!(row.std_iters, 0.0);
        assert_eq!(row.mean_iters, stats.trials[0].iterations.unwrap() as f64);
        assert!(stats.trials[0].kkt_ok);
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = SweepConfig {
            base_seed: 7,
            ..default_sweep(3, vec![6, 9], 3)
        };
        let render = |s: &SweepStats| {
            let mut buf = Vec::new();
            s.write_csv(&mut buf).unwrap();
            buf
        };
        let a = render(&run_convergence_sweep(&cfg).unwrap());
        let b = render(&run_convergence_sweep(&cfg).unwrap());
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(
            text.starts_with("J,I,epsilon,trials,mean_iters,std_iters,failures,mean_undecided\n")
        );
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn invalid_sweeps_are_rejected() {
        assert!(run_convergence_sweep(&default_sweep(5, vec![20], 0)).is_err());
        assert!(run_convergence_sweep(&default_sweep(5, vec![], 1)).is_err());
    }

    #[test]
    fn single_pair_snapshot_sells_everything() {
        let u = UtilityFunction::scaled_log(1.0).unwrap();
        let g = GameInstance::new(1, 1, vec![2.0], vec![0.6], vec![u], 0).unwrap();
        let r = equilibrium_snapshot(&g).unwrap();
        assert!((r.users[0].purchases[0] - 0.6).abs() < 1e-12);
        assert!(!r.users[0].purchases_nothing);
        assert_eq!(r.edges.len(), 1);
    }

    #[test]
    fn snapshot_totals_clear() {
        let g = generate_instance(
            &ChannelModelConfig::default(),
            20,
            5,
            UtilityFunction::scaled_log(crate::model::DEFAULT_WEIGHT).unwrap(),
            42,
        )
        .unwrap();
        let r = equilibrium_snapshot(&g).unwrap();
        assert!(r.undecided_count <= 4);
        assert!(!r.loop_found);
        for (j, p) in r.providers.iter().enumerate() {
            assert!((p.sold - g.supply()[j]).abs() < 1e-9);
        }
        let mut buf = Vec::new();
        r.write_edges_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("user,provider,q,c\n"));
        let back: AssociationReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.users.len(), 20);
    }
}
