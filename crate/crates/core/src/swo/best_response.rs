use serde::Serialize;

use crate::model::{GameInstance, UtilityFunction};

/// Relative tolerance on price/offset ratios for preference-set membership.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

/// A price-taking user's optimal purchase at fixed prices.
///
/// The effective resource `x_star` is unique; how it is split across the
/// preference set is not, unless the set is a singleton.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestResponse {
    pub x_star: f64,
    /// Providers attaining the minimum `p_j / c_ij`, ascending.
    pub preference: Vec<usize>,
    /// `min_k p_k / c_ik`
    pub mu: f64,
}

impl BestResponse {
    pub fn is_decided(&self) -> bool {
        self.preference.len() == 1
    }

    pub fn purchases(&self) -> bool {
        self.x_star > 0.0
    }

    /// Demand vector buying everything from the lowest-index preferred
    /// provider.
    pub fn single_provider_demand(&self, c_i: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; c_i.len()];
        if let Some(&j) = self.preference.first() {
            q[j] = self.x_star / c_i[j];
        }
        q
    }
}

/// Best response of a user with utility `u` and offsets `c_i` to prices `p`.
/// Prices must be strictly positive.
pub fn best_response(u: &UtilityFunction, c_i: &[f64], p: &[f64], tie_tol: f64) -> BestResponse {
    assert_eq!(c_i.len(), p.len(), "offset and price lengths differ");
    debug_assert!(p.iter().all(|v| *v > 0.0), "prices must be positive");
    let ratios: Vec<f64> = p.iter().zip(c_i).map(|(p, c)| p / c).collect();
    let mu = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let cutoff = mu * (1.0 + tie_tol);
    let preference = ratios
        .iter()
        .enumerate()
        .filter(|(_, r)| **r <= cutoff)
        .map(|(j, _)| j)
        .collect();
    BestResponse {
        x_star: u.inverse_marginal(mu),
        preference,
        mu,
    }
}

pub fn user_best_response(
    instance: &GameInstance,
    i: usize,
    p: &[f64],
    tie_tol: f64,
) -> BestResponse {
    best_response(instance.utility(i), instance.c_row(i), p, tie_tol)
}
