// SPDX-License-Identifier: Apache-2.0

//! Projection onto the scan-time constraint and gradient normalisation.

use crate::error::{Error, Result};
use crate::kspace::{AcquisitionBudget, AveragingPattern};

/// Relative positivity floor: entries are kept at or above
/// `FLOOR_FRACTION · budget / N`.
pub const FLOOR_FRACTION: f64 = 1e-3;

/// Euclidean projection of `w` onto `{x : Σx = target, x ≥ floor}`.
///
/// Every entry is shifted by the same amount `(target − Σw)/N`. Entries that
/// fall below `floor` are clamped there and the remaining mass is
/// redistributed over the unclamped entries, repeating until feasible. The
/// result is `max(w + ν, floor)` for the unique `ν` that meets the sum.
pub fn project_to_sum(w: &[f64], target: f64, floor: f64) -> Result<Vec<f64>> {
    let n = w.len();
    if n == 0 {
        return Err(Error::InfeasibleProjection("empty vector".into()));
    }
    if let Some(v) = w.iter().find(|v| !v.is_finite()) {
        return Err(Error::InfeasibleProjection(format!("non-finite entry {v}")));
    }
    if !target.is_finite() || !floor.is_finite() || floor * n as f64 > target {
        return Err(Error::InfeasibleProjection(format!("{n} entries of at least {floor} cannot sum to {target}")));
    }
    let mut clamped = vec![false; n];
    loop {
        let free = clamped.iter().filter(|c| !**c).count();
        if free == 0 {
            return Err(Error::InfeasibleProjection("every entry clamped".into()));
        }
        let fixed = (n - free) as f64 * floor;
        let free_sum: f64 = w.iter().zip(&clamped).filter(|(_, c)| !**c).map(|(v, _)| v).sum();
        let shift = (target - fixed - free_sum) / free as f64;
        let mut changed = false;
        for (v, c) in w.iter().zip(clamped.iter_mut()) {
            if !*c && v + shift < floor {
                *c = true;
                changed = true;
            }
        }
        if !changed {
            return Ok(w.iter().zip(&clamped).map(|(v, c)| if *c { floor } else { v + shift }).collect());
        }
    }
}

/// Projects a raw length-`N` vector onto the budget surface
/// `Σ w_m = w̃₀N₀²/N` with the positivity floor.
pub fn project_budget(w: &[f64], budget: &AcquisitionBudget) -> Result<AveragingPattern> {
    let n = w.len();
    budget.check_gridsize(n)?;
    let target = budget.effective_budget(n);
    let x = project_to_sum(w, target, FLOOR_FRACTION * target / n as f64)?;
    AveragingPattern::new(x, budget)
}

/// `g / ‖g‖₂`, or the zero vector when `‖g‖₂ ≤ 1e-12`.
pub fn normalize_gradient(g: &[f64]) -> Vec<f64> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        g.iter().map(|v| v / norm).collect()
    } else {
        vec![0.0; g.len()]
    }
}
