// SPDX-License-Identifier: Apache-2.0

//! Integer rounding of a continuous averaging design under the exact TR budget.

use crate::kspace::{AcquisitionBudget, AveragingPattern, IntegerAveragingPattern};

/// Marginal costs closer than this are treated as ties.
const TIE: f64 = 1e-12;

/// Distance of entry `i` from the midpoint of a length-`len` grid.
fn center_distance(i: usize, len: usize) -> f64 {
    (i as f64 - (len as f64 - 1.0) / 2.0).abs()
}

/// Nonnegative integer vector summing to `total` that minimises `‖q − target‖₁`.
///
/// Entries are rounded half away from zero, then single units are added
/// (or removed) wherever the cost grows least. Ties keep averages near the
/// middle of the vector: additions go to the entry nearest the centre,
/// removals come from the entry farthest from it, and remaining ties go to
/// the lower index. `target` entries must be finite and nonnegative.
pub fn round_to_budget(target: &[f64], total: u64) -> Vec<u64> {
    assert!(!target.is_empty(), "cannot round an empty pattern");
    assert!(target.iter().all(|t| t.is_finite() && *t >= 0.0), "targets must be finite and >= 0");
    let len = target.len();
    let mut q: Vec<u64> = target.iter().map(|t| t.round() as u64).collect();
    let mut sum: u64 = q.iter().sum();
    let cost = |qi: u64, t: f64| (qi as f64 - t).abs();
    while sum < total {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..len {
            let inc = cost(q[i] + 1, target[i]) - cost(q[i], target[i]);
            best = match best {
                None => Some((i, inc)),
                Some((j, b)) => {
                    if inc < b - TIE || ((inc - b).abs() <= TIE && center_distance(i, len) < center_distance(j, len)) {
                        Some((i, inc))
                    } else {
                        Some((j, b))
                    }
                }
            };
        }
        let (i, _) = best.expect("nonempty");
        q[i] += 1;
        sum += 1;
    }
    while sum > total {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..len).filter(|&i| q[i] > 0) {
            let inc = cost(q[i] - 1, target[i]) - cost(q[i], target[i]);
            best = match best {
                None => Some((i, inc)),
                Some((j, b)) => {
                    if inc < b - TIE || ((inc - b).abs() <= TIE && center_distance(i, len) > center_distance(j, len)) {
                        Some((i, inc))
                    } else {
                        Some((j, b))
                    }
                }
            };
        }
        let (i, _) = best.expect("sum > 0 implies a positive entry");
        q[i] -= 1;
        sum -= 1;
    }
    q
}

/// Converts effective averages to actual averages `(N/N₀) ŵ` and rounds them
/// to an integer pattern spending exactly `w̃₀N₀` TRs.
pub fn round_pattern(w: &AveragingPattern, budget: &AcquisitionBudget) -> IntegerAveragingPattern {
    let counts = round_to_budget(&w.actual_from_effective(), budget.total_trs());
    IntegerAveragingPattern::new(counts, budget).expect("rounded pattern meets the budget by construction")
}

/// `‖q − target‖₁`.
pub fn rounding_cost(q: &[u64], target: &[f64]) -> f64 {
    q.iter().zip(target).map(|(a, b)| (*a as f64 - b).abs()).sum()
}
