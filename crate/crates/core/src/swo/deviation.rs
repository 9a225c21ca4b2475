use serde::Serialize;

use super::best_response::{user_best_response, DEFAULT_TIE_TOL};
use super::decode::Equilibrium;
use crate::model::GameInstance;

/// Relative price deviations probed by default (both directions).
pub const DEFAULT_DELTAS: [f64; 3] = [0.01, 0.05, 0.10];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationEntry {
    pub provider: usize,
    /// Signed relative deviation: the provider charges `p*_j (1 + delta)`.
    pub delta: f64,
    pub base_revenue: f64,
    pub deviated_revenue: f64,
    pub change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationReport {
    pub entries: Vec<DeviationEntry>,
    /// Largest revenue change over all probes.
    pub max_gain: f64,
}

/// Probes unilateral price deviations of each provider around an
/// equilibrium. Users re-optimise against the deviated price vector; when a
/// provider's demand exceeds its supply, sales are rationed proportionally,
/// so its revenue is `p_j * min(demand_j, Q_j)`. A tied user is served by its
/// lowest-index preferred provider.
pub fn deviation_diagnostic(
    instance: &GameInstance,
    eq: &Equilibrium,
    deltas: &[f64],
) -> DeviationReport {
    let mut entries = Vec::new();
    for j in 0..instance.providers() {
        let base_revenue = eq.p[j] * eq.q.column_sum(j);
        for &delta in deltas {
            let signed = if delta == 0.0 {
                vec![0.0]
            } else {
                vec![delta, -delta]
            };
            for d in signed {
                let deviated_revenue = if d == 0.0 {
                    base_revenue
                } else {
                    let mut p = eq.p.clone();
                    p[j] *= 1.0 + d;
                    let demand: f64 = (0..instance.users())
                        .map(|i| {
                            let br = user_best_response(instance, i, &p, DEFAULT_TIE_TOL);
                            if br.preference.first() == Some(&j) {
                                br.x_star / instance.c(i, j)
                            } else {
                                0.0
                            }
                        })
                        .sum();
                    p[j] * demand.min(instance.supply()[j])
                };
                entries.push(DeviationEntry {
                    provider: j,
                    delta: d,
                    base_revenue,
                    deviated_revenue,
                    change: deviated_revenue - base_revenue,
                });
            }
        }
    }
    let max_gain = entries
        .iter()
        .map(|e| e.change)
        .fold(f64::NEG_INFINITY, f64::max);
    DeviationReport { entries, max_gain }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UtilityFunction;
    use crate::swo::decode_demands;

    fn two_user_eq() -> (GameInstance, Equilibrium) {
        let u = UtilityFunction::scaled_log(1.0).unwrap();
        let g = GameInstance::new(2, 1, vec![2.0, 1.0], vec![1.0], vec![u; 2], 0).unwrap();
        let eq = decode_demands(&g, &[0.8], 1e-9).unwrap();
        (g, eq)
    }

    #[test]
    fn zero_deviation_changes_nothing() {
        let (g, eq) = two_user_eq();
        let r = deviation_diagnostic(&g, &eq, &[0.0]);
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].change, 0.0);
    }

    #[test]
    fn raising_price_loses_revenue() {
        let (g, eq) = two_user_eq();
        let r = deviation_diagnostic(&g, &eq, &[0.1]);
        let up = r.entries.iter().find(|e| e.delta > 0.0).unwrap();
        // At 0.88: user 1 buys (2/0.88 - 1)/2, user 2 buys 1/0.88 - 1.
        let demand = (2.0 / 0.88 - 1.0) / 2.0 + (1.0 / 0.88 - 1.0);
        assert!((up.deviated_revenue - 0.88 * demand).abs() < 1e-12);
        assert!(up.change < 0.0);
    }

    #[test]
    fn cutting_price_is_capped_by_supply() {
        let (g, eq) = two_user_eq();
        let r = deviation_diagnostic(&g, &eq, &[0.1]);
        let down = r.entries.iter().find(|e| e.delta < 0.0).unwrap();
        assert!(down.deviated_revenue <= 0.8 * 1.0);
        assert!((down.deviated_revenue - 0.72).abs() < 1e-12);
        assert!(r.max_gain <= 1e-12);
    }
}
