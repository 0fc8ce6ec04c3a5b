// SPDX-License-Identifier: Apache-2.0

//! Joint acquisition/reconstruction design.
//!
//! The outer problem picks the gridsize `N̂` from a finite candidate list by
//! comparing reconstructions against full-resolution references. For each
//! candidate the inner problem trains the reconstruction parameters `p` and,
//! in nonuniform mode, the effective averaging pattern `w` by projected SGD on
//! the scan-time constraint, finishing with an integer rounding of `w`.

mod project;
mod round;
mod train;

pub use project::{normalize_gradient, project_budget, project_to_sum, FLOOR_FRACTION};
pub use round::{round_pattern, round_to_budget, rounding_cost};
pub use train::{
    grid_search, initial_lambda, train_inner, CandidateResult, DesignResult, InnerResult, TrainingSet, WINDOW_FLOOR,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kspace::AcquisitionBudget;
use crate::recon::{AdmmConfig, Method};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// `w` fixed at `w̃₀N₀²/N²` on every line; only `p` is trained.
    Uniform,
    /// `p` and `w` trained jointly, `w` rounded and frozen before fine-tuning.
    Nonuniform,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Uniform => "uniform",
            Mode::Nonuniform => "nonuniform",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Mode::Uniform),
            "nonuniform" => Ok(Mode::Nonuniform),
            other => Err(Error::UnknownCombination(format!("unknown mode '{other}'"))),
        }
    }
}

/// Which slices the outer loss is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Selection {
    /// The training slices with their training noise realisations.
    Training,
    /// The validation slices with fresh noise.
    Validation,
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Selection::Training => "training",
            Selection::Validation => "validation",
        })
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(Selection::Training),
            "validation" => Ok(Selection::Validation),
            other => Err(Error::InvalidParameter(format!("unknown selection '{other}'"))),
        }
    }
}

/// SGD schedule. Rates decay multiplicatively once per epoch.
///
/// How the rates act on the parameters:
///
/// * apodization window: `h ← max(h − lr_p · g / B, floor)` with `B` the
///   row-sum bound of the batch Hessian, so `lr_p ≤ 1` never overshoots;
/// * SENSE-TV: `ln λ ← ln λ − lr_p · sign(∂loss/∂λ)`, the unit-norm gradient
///   of a scalar in log coordinates;
/// * pattern: `w ← Π(w − lr_w · g/‖g‖)` with `Π` the budget projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparameters {
    pub lr_p: f64,
    pub decay_p: f64,
    pub lr_w: f64,
    pub decay_w: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epoch at which `w` is rounded and frozen; later epochs tune `p` only.
    pub rounding_epoch: Option<usize>,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lr_p", self.lr_p), ("lr_w", self.lr_w)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("decay_p", self.decay_p), ("decay_w", self.decay_w)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        if let Some(r) = self.rounding_epoch {
            if r > self.epochs {
                return Err(Error::InvalidParameter(format!(
                    "rounding epoch {r} exceeds the {} training epochs",
                    self.epochs
                )));
            }
        }
        Ok(())
    }
}

/// Reference training schedules, keyed by method and mode.
pub fn default_hyperparameters(method: Method, mode: Mode) -> Result<Hyperparameters> {
    let h = match (method, mode) {
        (Method::SenseTv, Mode::Uniform) => Hyperparameters {
            lr_p: 0.01,
            decay_p: 0.9,
            lr_w: 0.0,
            decay_w: 1.0,
            epochs: 10,
            batch_size: 8,
            rounding_epoch: None,
        },
        (Method::SenseTv, Mode::Nonuniform) => Hyperparameters {
            lr_p: 0.001,
            decay_p: 0.99,
            lr_w: 0.01,
            decay_w: 0.99,
            epochs: 50,
            batch_size: 8,
            rounding_epoch: Some(45),
        },
        (Method::Apodized, Mode::Uniform) => Hyperparameters {
            lr_p: 1.0,
            decay_p: 0.99,
            lr_w: 0.0,
            decay_w: 1.0,
            epochs: 50,
            batch_size: 8,
            rounding_epoch: None,
        },
        (Method::Apodized, Mode::Nonuniform) => Hyperparameters {
            lr_p: 1.0,
            decay_p: 0.99,
            lr_w: 0.1,
            decay_w: 0.99,
            epochs: 50,
            batch_size: 8,
            rounding_epoch: Some(45),
        },
        (m, mode) => {
            return Err(Error::UnknownCombination(format!("no training schedule for {m} in {mode} mode")));
        }
    };
    Ok(h)
}

/// Even gridsizes from `n0/4` to `n0` in steps of `n0/8` (at least 2).
pub fn default_candidates(n0: usize) -> Vec<usize> {
    let step = ((n0 / 8) & !1).max(2);
    let start = ((n0 / 4) & !1).max(2);
    (start..=n0).step_by(step).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignProblem {
    pub budget: AcquisitionBudget,
    pub candidates: Vec<usize>,
    pub method: Method,
    pub mode: Mode,
    pub hyper: Hyperparameters,
    pub admm: AdmmConfig,
    pub selection: Selection,
}

impl DesignProblem {
    /// Problem with the reference schedule, default ADMM settings and
    /// training-set selection.
    pub fn new(budget: AcquisitionBudget, candidates: Vec<usize>, method: Method, mode: Mode) -> Result<Self> {
        let p = Self {
            budget,
            candidates,
            method,
            mode,
            hyper: default_hyperparameters(method, mode)?,
            admm: AdmmConfig::default(),
            selection: Selection::Training,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidParameter("candidate list is empty".into()));
        }
        for &n in &self.candidates {
            self.budget.check_gridsize(n)?;
        }
        if self.method == Method::ZeroFilled && self.mode == Mode::Nonuniform {
            return Err(Error::UnknownCombination("zero-filled recon has no nonuniform training".into()));
        }
        self.hyper.validate()?;
        self.admm.validate()
    }
}
