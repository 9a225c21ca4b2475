use serde::{Deserialize, Serialize};

use crate::model::{effective_resource, DemandMatrix, GameInstance};

/// Residuals of the optimality conditions of the welfare problem at a given
/// demand/price pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `max_{i,j} (u_i'(x_i) c_ij - p_j)^+`
    pub stationarity_residual: f64,
    /// `max_{i,j} |q_ij (u_i'(x_i) c_ij - p_j)|`
    pub complementary_slackness_residual: f64,
    /// `max_j |sum_i q_ij - Q_j|`
    pub clearing_residual: f64,
    /// All demands and prices nonnegative and finite.
    pub feasible: bool,
    pub passed: bool,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity_residual
            .max(self.complementary_slackness_residual)
            .max(self.clearing_residual)
    }
}

/// Evaluates stationarity, complementary slackness, clearing and sign
/// constraints. The effective resource is recomputed from `q`, so its
/// consistency is implied. Negative or non-finite inputs are reported as
/// infeasible rather than rejected.
pub fn verify_kkt(instance: &GameInstance, q: &DemandMatrix, p: &[f64], tol: f64) -> KktReport {
    assert_eq!(q.users(), instance.users());
    assert_eq!(q.providers(), instance.providers());
    assert_eq!(p.len(), instance.providers());

    let feasible = q
        .as_flat()
        .iter()
        .chain(p)
        .all(|v| v.is_finite() && *v >= 0.0);

    let mut stationarity = 0.0f64;
    let mut slackness = 0.0f64;
    for i in 0..instance.users() {
        let x = effective_resource(q.row(i), instance.c_row(i));
        let marginal = instance.utility(i).marginal(x);
        for (j, &price) in p.iter().enumerate() {
            let gap = marginal * instance.c(i, j) - price;
            stationarity = stationarity.max(gap.max(0.0));
            if q[(i, j)] != 0.0 {
                slackness = slackness.max((q[(i, j)] * gap).abs());
            }
        }
    }
    let clearing = (0..instance.providers())
        .map(|j| (q.column_sum(j) - instance.supply()[j]).abs())
        .fold(0.0, f64::max);

    let passed = feasible
        && stationarity <= tol
        && slackness <= tol
        && clearing <= tol
        && !stationarity.is_nan()
        && !slackness.is_nan();
    KktReport {
        stationarity_residual: stationarity,
        complementary_slackness_residual: slackness,
        clearing_residual: clearing,
        feasible,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UtilityFunction;

    fn two_user() -> GameInstance {
        let u = UtilityFunction::scaled_log(1.0).unwrap();
        GameInstance::new(2, 1, vec![2.0, 1.0], vec![1.0], vec![u; 2], 0).unwrap()
    }

    #[test]
    fn hand_solution_passes() {
        let q = DemandMatrix::from_rows(&[vec![0.75], vec![0.25]]);
        let r = verify_kkt(&two_user(), &q, &[0.8], 1e-9);
        assert!(r.passed, "{r:?}");
        assert!(r.max_residual() < 1e-9);
    }

    #[test]
    fn equal_split_fails_slackness() {
        let q = DemandMatrix::from_rows(&[vec![0.5], vec![0.5]]);
        let r = verify_kkt(&two_user(), &q, &[0.8], 1e-9);
        assert!(!r.passed);
        // user 1: u'(1) * 2 = 1 against a price of 0.8
        assert!((r.complementary_slackness_residual - 0.1).abs() < 1e-12);
        assert!((r.stationarity_residual - 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_market_cannot_clear() {
        let q = DemandMatrix::zeros(2, 1);
        let r = verify_kkt(&two_user(), &q, &[1e6], 1e-9);
        assert_eq!(r.clearing_residual, 1.0);
        assert!(!r.passed);
    }

    #[test]
    fn negative_input_is_infeasible() {
        let q = DemandMatrix::from_rows(&[vec![1.25], vec![-0.25]]);
        let r = verify_kkt(&two_user(), &q, &[0.8], 1e-9);
        assert!(!r.feasible);
        assert!(!r.passed);
    }
}
