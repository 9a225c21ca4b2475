//! Market-clearing price search.
//!
//! Aggregate demand is set-valued wherever a user is indifferent between
//! providers, and the clearing prices generically sit exactly on such ties,
//! so plain tatonnement oscillates around them. The search therefore runs a
//! damped multiplicative tatonnement to get close and periodically tries to
//! snap onto the exact solution: read off the tie structure at the current
//! prices, solve the resulting one-dimensional clearing equation per
//! connected component, and accept the candidate only if the decoded demands
//! satisfy every optimality condition.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::best_response::{best_response, DEFAULT_TIE_TOL};
use super::decode::{decode_demands, Equilibrium};
use crate::error::{Error, Result};
use crate::model::{GameInstance, PriceVector};

/// Relative tie tolerances tried when reading the structure off approximate
/// prices.
const STRUCTURE_TOLS: [f64; 6] = [1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Optimality tolerance a snapped candidate must meet, relative to the
/// largest price.
const SNAP_KKT_TOL: f64 = 1e-10;

const POLISH_EVERY: usize = 10;

const SMOOTHING_DECAY: f64 = 0.995;
const MIN_SMOOTHING: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceOptions {
    /// Initial relative step of the multiplicative update.
    pub step: f64,
    /// Factor applied to a provider's step when its excess demand flips sign.
    pub damping: f64,
    pub max_iters: usize,
    /// Relative clearing tolerance `|demand_j - Q_j| <= tol * Q_j`.
    pub clearing_tol: f64,
    pub tie_tol: f64,
    /// Initial softmin temperature for splitting tied demand during the
    /// search; annealed geometrically.
    pub smoothing: f64,
}

impl Default for PriceOptions {
    fn default() -> Self {
        Self {
            step: 0.5,
            damping: 0.5,
            max_iters: 20_000,
            clearing_tol: 1e-9,
            tie_tol: DEFAULT_TIE_TOL,
            smoothing: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriceSolution {
    pub p: PriceVector,
    pub iterations: usize,
    /// Largest relative clearing residual of the decoded demands.
    pub residual: f64,
}

/// Starting prices: the price at which the strongest user alone would buy
/// each provider's whole supply.
pub fn initial_prices(instance: &GameInstance) -> PriceVector {
    (0..instance.providers())
        .map(|j| {
            let q = instance.supply()[j];
            (0..instance.users())
                .map(|i| {
                    let c = instance.c(i, j);
                    c * instance.utility(i).marginal(c * q)
                })
                .fold(f64::MIN_POSITIVE, f64::max)
        })
        .collect()
}

pub fn solve_prices(instance: &GameInstance, opts: &PriceOptions) -> Result<PriceSolution> {
    solve_prices_from(instance, initial_prices(instance), opts)
}

pub fn solve_prices_from(
    instance: &GameInstance,
    start: PriceVector,
    opts: &PriceOptions,
) -> Result<PriceSolution> {
    if start.len() != instance.providers() || start.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::InvalidParameter(
            "starting prices must be positive, one per provider".into(),
        ));
    }
    let providers = instance.providers();
    let mut p = start;
    let mut steps = vec![opts.step; providers];
    let mut last_sign = vec![0.0f64; providers];
    let mut last_residual = f64::INFINITY;

    for iteration in 0..=opts.max_iters {
        if let Some(residual) = decoded_clearing(instance, &p, opts) {
            return Ok(PriceSolution {
                p,
                iterations: iteration,
                residual,
            });
        }
        if iteration % POLISH_EVERY == 0 {
            if let Some((snapped, residual)) = snap_to_structure(instance, &p, opts) {
                return Ok(PriceSolution {
                    p: snapped,
                    iterations: iteration,
                    residual,
                });
            }
        }
        if iteration == opts.max_iters {
            break;
        }

        let temperature =
            (opts.smoothing * SMOOTHING_DECAY.powi(iteration as i32)).max(MIN_SMOOTHING);
        let excess = interim_excess(instance, &p, temperature);
        last_residual = excess.iter().fold(0.0, |m, e| m.max(e.abs()));
        for j in 0..providers {
            let sign = excess[j].signum();
            if last_sign[j] != 0.0 && sign != last_sign[j] {
                steps[j] *= opts.damping;
            } else if last_sign[j] == sign {
                steps[j] = (steps[j] * 1.1).min(opts.step);
            }
            last_sign[j] = sign;
            p[j] *= (1.0 + steps[j] * excess[j]).clamp(0.5, 2.0);
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iters,
        residual: last_residual,
    })
}

/// Relative excess demand during the search. Each user buys its optimal
/// effective resource, split across providers with softmin weights on
/// `ln(p_j / c_ij)` at the given temperature. As the temperature goes to zero
/// this concentrates on the preference set; keeping it positive makes
/// aggregate demand continuous so the multiplicative update can settle on
/// prices where some users are indifferent.
fn interim_excess(instance: &GameInstance, p: &[f64], temperature: f64) -> Vec<f64> {
    let mut demand = vec![0.0; instance.providers()];
    for i in 0..instance.users() {
        let br = best_response(instance.utility(i), instance.c_row(i), p, 0.0);
        if !br.purchases() {
            continue;
        }
        let c_i = instance.c_row(i);
        let weights: Vec<f64> = p
            .iter()
            .zip(c_i)
            .map(|(p, c)| (-(p / c / br.mu).ln() / temperature).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        for (j, w) in weights.iter().enumerate() {
            demand[j] += w / total * br.x_star / c_i[j];
        }
    }
    demand
        .iter()
        .zip(instance.supply())
        .map(|(d, q)| (d - q) / q)
        .collect()
}

/// Largest relative clearing residual of the decoded demands, if decoding
/// succeeds and every provider clears within tolerance.
fn decoded_clearing(instance: &GameInstance, p: &[f64], opts: &PriceOptions) -> Option<f64> {
    let eq = decode_demands(instance, p, opts.tie_tol).ok()?;
    let residual = relative_clearing(instance, &eq);
    (residual <= opts.clearing_tol).then_some(residual)
}

fn relative_clearing(instance: &GameInstance, eq: &Equilibrium) -> f64 {
    (0..instance.providers())
        .map(|j| (eq.q.column_sum(j) - instance.supply()[j]).abs() / instance.supply()[j])
        .fold(0.0, f64::max)
}

fn snap_to_structure(
    instance: &GameInstance,
    p: &[f64],
    opts: &PriceOptions,
) -> Option<(PriceVector, f64)> {
    STRUCTURE_TOLS.iter().find_map(|&tol| {
        let candidate = exact_prices_for_structure(instance, p, tol)?;
        let eq = decode_demands(instance, &candidate, opts.tie_tol).ok()?;
        let scale = candidate.iter().fold(1.0f64, |m, v| m.max(*v));
        let kkt = super::kkt::verify_kkt(instance, &eq.q, &candidate, SNAP_KKT_TOL * scale);
        let residual = relative_clearing(instance, &eq);
        (kkt.passed && residual <= opts.clearing_tol).then_some((candidate, residual))
    })
}

/// Solves the clearing conditions exactly for the purchase structure read off
/// `p` at relative tie tolerance `tol`. Returns `None` when the structure is
/// not a forest or leaves a provider without buyers.
///
/// On a tree component the ratios `p_j / c_ij` fix every price and every
/// user's marginal value up to one common scale `t`. Weighting provider
/// clearing by price and user effective resource by marginal value turns the
/// component's balance equations into `sum_j r_j Q_j = sum_i s_i x_i(s_i t)`,
/// whose right side is decreasing in `t`.
fn exact_prices_for_structure(instance: &GameInstance, p: &[f64], tol: f64) -> Option<PriceVector> {
    let users = instance.users();
    let providers = instance.providers();

    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); users];
    let mut buyers: Vec<Vec<usize>> = vec![Vec::new(); providers];
    for (i, set) in sets.iter_mut().enumerate() {
        let br = best_response(instance.utility(i), instance.c_row(i), p, tol);
        if instance.utility(i).marginal(0.0) <= br.mu {
            continue;
        }
        for &j in &br.preference {
            buyers[j].push(i);
        }
        *set = br.preference;
    }

    let mut provider_scale: Vec<Option<f64>> = vec![None; providers];
    let mut user_scale: Vec<Option<f64>> = vec![None; users];
    let mut out = vec![0.0; providers];
    for root in 0..providers {
        if provider_scale[root].is_some() {
            continue;
        }
        if buyers[root].is_empty() {
            return None;
        }
        provider_scale[root] = Some(1.0);
        let mut comp_providers = vec![root];
        let mut comp_users = Vec::new();
        let mut comp_edges = 0usize;
        let mut queue = VecDeque::from([root]);
        while let Some(j) = queue.pop_front() {
            let r = provider_scale[j].unwrap();
            for &i in &buyers[j] {
                if user_scale[i].is_some() {
                    continue;
                }
                let s = r / instance.c(i, j);
                user_scale[i] = Some(s);
                comp_users.push(i);
                comp_edges += sets[i].len();
                for &k in &sets[i] {
                    if provider_scale[k].is_none() {
                        provider_scale[k] = Some(s * instance.c(i, k));
                        comp_providers.push(k);
                        queue.push_back(k);
                    }
                }
            }
        }
        // A connected graph is a tree iff edges = nodes - 1.
        if comp_edges + 1 != comp_users.len() + comp_providers.len() {
            return None;
        }

        let target: f64 = comp_providers
            .iter()
            .map(|&j| provider_scale[j].unwrap() * instance.supply()[j])
            .sum();
        let spend = |t: f64| -> f64 {
            comp_users
                .iter()
                .map(|&i| {
                    let s = user_scale[i].unwrap();
                    s * instance.utility(i).inverse_marginal(s * t)
                })
                .sum()
        };
        let t = solve_decreasing(spend, target, p[root])?;
        for &j in &comp_providers {
            out[j] = provider_scale[j].unwrap() * t;
        }
    }
    Some(out)
}

/// Finds `t > 0` with `f(t) = target` for a nonincreasing `f`, by bracketing
/// then geometric bisection to full precision.
fn solve_decreasing<F: Fn(f64) -> f64>(f: F, target: f64, guess: f64) -> Option<f64> {
    let (mut lo, mut hi) = (guess, guess);
    let mut expansions = 0;
    while f(lo) <= target {
        lo *= 0.5;
        expansions += 1;
        if expansions > 2000 || lo == 0.0 {
            return None;
        }
    }
    while f(hi) > target {
        hi *= 2.0;
        expansions += 1;
        if expansions > 4000 || !hi.is_finite() {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(if (f(lo) - target).abs() <= (f(hi) - target).abs() {
        lo
    } else {
        hi
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UtilityFunction;

    fn log1() -> UtilityFunction {
        UtilityFunction::scaled_log(1.0).unwrap()
    }

    #[test]
    fn single_user_single_provider() {
        let g = GameInstance::new(1, 1, vec![1.0], vec![1.0], vec![log1()], 0).unwrap();
        let sol = solve_prices(&g, &PriceOptions::default()).unwrap();
        assert!((sol.p[0] - 0.5).abs() < 1e-12, "{:?}", sol.p);
    }

    #[test]
    fn two_users_single_provider() {
        let g = GameInstance::new(2, 1, vec![2.0, 1.0], vec![1.0], vec![log1(); 2], 0).unwrap();
        let sol = solve_prices(&g, &PriceOptions::default()).unwrap();
        assert!((sol.p[0] - 0.8).abs() < 1e-12, "{:?}", sol.p);
    }

    #[test]
    fn restarting_at_solution_takes_no_iterations() {
        let g = GameInstance::new(2, 1, vec![2.0, 1.0], vec![1.0], vec![log1(); 2], 0).unwrap();
        let opts = PriceOptions::default();
        let sol = solve_prices(&g, &opts).unwrap();
        let again = solve_prices_from(&g, sol.p.clone(), &opts).unwrap();
        assert_eq!(again.iterations, 0);
        assert_eq!(again.p, sol.p);
    }

    #[test]
    fn tied_user_is_resolved_exactly() {
        // One user, two providers: clearing needs the user indifferent
        // between both, and buying Q_1 + Q_2 in total.
        let g = GameInstance::new(1, 2, vec![2.0, 3.0], vec![1.0, 1.0], vec![log1()], 0).unwrap();
        let sol = solve_prices(&g, &PriceOptions::default()).unwrap();
        // x = 2 + 3 = 5, mu = 1/6, p = c * mu
        assert!((sol.p[0] - 2.0 / 6.0).abs() < 1e-12, "{:?}", sol.p);
        assert!((sol.p[1] - 3.0 / 6.0).abs() < 1e-12, "{:?}", sol.p);
    }

    #[test]
    fn zero_iteration_budget_reports_no_convergence() {
        let g = GameInstance::new(1, 2, vec![2.0, 3.0], vec![1.0, 1.0], vec![log1()], 0).unwrap();
        let opts = PriceOptions {
            max_iters: 0,
            ..Default::default()
        };
        // Bad start and no iterations: the snap can still fail on the wrong
        // structure, so either outcome must be a well-formed result.
        match solve_prices_from(&g, vec![100.0, 0.001], &opts) {
            Err(Error::NoConvergence { iterations, .. }) => assert_eq!(iterations, 0),
            Ok(sol) => assert!(sol.residual <= opts.clearing_tol),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn solve_decreasing_hits_target() {
        let t = solve_decreasing(|t| 1.0 / t, 4.0, 10.0).unwrap();
        assert!((t - 0.25).abs() < 1e-15);
    }
}
