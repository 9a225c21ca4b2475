//! Grid-search oracle for tiny instances, independent of the price-based
//! solver: it never looks at prices, only at welfare over feasible demands.
//!
//! Demands are integer multiples of a per-provider unit `Q_j / N_j` with
//! `N_j ~ Q_j / grid_step`. Full enumeration of the clearing simplices is
//! done on a coarse lattice, then successively finer lattices are enumerated
//! exhaustively inside a window around the incumbent until the unit reaches
//! the requested grid step.

use crate::error::{Error, Result};
use crate::model::{DemandMatrix, GameInstance};
use crate::swo::social_welfare;

pub const MAX_ORACLE_USERS: usize = 3;
pub const MAX_ORACLE_PROVIDERS: usize = 2;

/// Points per user and dimension on the first, exhaustive level.
const COARSE_POINTS: usize = 24;
/// Fine-lattice units searched on each side of the incumbent at the last level.
const FINAL_WINDOW: usize = 8;

pub fn brute_force_swo(instance: &GameInstance, grid_step: f64) -> Result<(DemandMatrix, f64)> {
    let (users, providers) = (instance.users(), instance.providers());
    if users > MAX_ORACLE_USERS || providers > MAX_ORACLE_PROVIDERS {
        return Err(Error::InstanceTooLarge { users, providers });
    }
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "grid step must be positive, got {grid_step}"
        )));
    }

    let totals: Vec<usize> = instance
        .supply()
        .iter()
        .map(|q| ((q / grid_step).round() as usize).max(1))
        .collect();
    let units: Vec<f64> = instance
        .supply()
        .iter()
        .zip(&totals)
        .map(|(q, n)| q / *n as f64)
        .collect();

    let to_matrix = |counts: &[Vec<usize>]| {
        let mut q = DemandMatrix::zeros(users, providers);
        for (j, col) in counts.iter().enumerate() {
            // The last user takes exactly what is left so columns clear.
            let mut left = instance.supply()[j];
            for (i, &k) in col.iter().enumerate().take(users - 1) {
                q[(i, j)] = k as f64 * units[j];
                left -= q[(i, j)];
            }
            q[(users - 1, j)] = left.max(0.0);
        }
        q
    };

    // Level 0: exhaustive on the coarse lattice.
    let mut stride: Vec<usize> = totals
        .iter()
        .map(|n| n.div_ceil(COARSE_POINTS).max(1))
        .collect();
    let candidates: Vec<Vec<Vec<usize>>> = (0..providers)
        .map(|j| compositions(totals[j], users, stride[j], None))
        .collect();
    let (mut best, mut best_welfare) = search(&candidates, &to_matrix, instance);

    // Refinement levels inside a window around the incumbent.
    loop {
        let done = stride.iter().all(|s| *s == 1);
        let next: Vec<usize> = stride.iter().map(|s| (s / 4).max(1)).collect();
        let window: Vec<usize> = stride
            .iter()
            .map(|s| {
                if done {
                    FINAL_WINDOW
                } else {
                    (2 * s).max(FINAL_WINDOW)
                }
            })
            .collect();
        let candidates: Vec<Vec<Vec<usize>>> = (0..providers)
            .map(|j| compositions(totals[j], users, next[j], Some((&best[j], window[j]))))
            .collect();
        let (cand, welfare) = search(&candidates, &to_matrix, instance);
        let improved = welfare > best_welfare;
        if improved {
            best = cand;
            best_welfare = welfare;
        }
        stride = next;
        if done && !improved {
            break;
        }
    }
    Ok((to_matrix(&best), best_welfare))
}

/// Best combination of per-provider splits.
fn search<F>(
    candidates: &[Vec<Vec<usize>>],
    to_matrix: &F,
    instance: &GameInstance,
) -> (Vec<Vec<usize>>, f64)
where
    F: Fn(&[Vec<usize>]) -> DemandMatrix,
{
    let mut best: Option<(Vec<Vec<usize>>, f64)> = None;
    let mut pick = vec![0usize; candidates.len()];
    loop {
        let counts: Vec<Vec<usize>> = pick
            .iter()
            .enumerate()
            .map(|(j, &k)| candidates[j][k].clone())
            .collect();
        let w = social_welfare(instance, &to_matrix(&counts));
        if best.as_ref().is_none_or(|(_, bw)| w > *bw) {
            best = Some((counts, w));
        }
        // Odometer over the provider dimensions.
        let mut d = 0;
        loop {
            if d == pick.len() {
                return best.expect("at least one candidate");
            }
            pick[d] += 1;
            if pick[d] < candidates[d].len() {
                break;
            }
            pick[d] = 0;
            d += 1;
        }
    }
}

/// Splits of `total` units over `parts` users where every user but the last
/// takes a multiple of `stride` (the last takes the remainder). With a
/// `center`, each of those users stays within `window` units of it.
fn compositions(
    total: usize,
    parts: usize,
    stride: usize,
    center: Option<(&Vec<usize>, usize)>,
) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(parts);
    fn rec(
        remaining: usize,
        parts: usize,
        stride: usize,
        center: Option<(&Vec<usize>, usize)>,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let i = current.len();
        if i + 1 == parts {
            if let Some((c, w)) = center {
                if remaining.abs_diff(c[i]) > w + stride * parts {
                    return;
                }
            }
            current.push(remaining);
            out.push(current.clone());
            current.pop();
            return;
        }
        let (lo, hi) = match center {
            Some((c, w)) => (c[i].saturating_sub(w), (c[i] + w).min(remaining)),
            None => (0, remaining),
        };
        let mut k = match center {
            Some((c, _)) => {
                // Align to the lattice through the incumbent.
                let back = (c[i] - lo) / stride * stride;
                c[i] - back
            }
            None => 0,
        };
        while k <= hi {
            current.push(k);
            rec(remaining - k, parts, stride, center, current, out);
            current.pop();
            k += stride;
        }
    }
    rec(total, parts, stride, center, &mut current, &mut out);
    out
}
