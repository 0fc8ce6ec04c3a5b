// SPDX-License-Identifier: Apache-2.0

//! Inner training loop and the outer grid search.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{normalize_gradient, project_budget, round_pattern, DesignProblem, Mode, Selection};
use crate::error::{Error, Result};
use crate::grid::ComplexImage;
use crate::kspace::{
    effective_from_actual, uniform_pattern, unit_noise, AcquisitionBudget, AveragingPattern, IntegerAveragingPattern,
    MultiCoilKSpace,
};
use crate::metrics::{mse_loss, ssim};
use crate::phantom::{lowres_pair, Dataset, Split};
use crate::recon::{
    apply_noise_and_reconstruct, loss_and_gradients, ApodizationWindow, EncodingModel, GradientOptions, Method,
    ParamGradient, ReconParams, TrainingSample,
};
use crate::rng::{derive_seed, stream_rng, Stream};

/// Lower bound on trained apodization window values.
pub const WINDOW_FLOOR: f64 = 1e-4;

/// Slices prepared for one gridsize: cropped clean data, a fixed unit-noise
/// realisation per slice, the low-resolution reference `r^N` and the
/// full-resolution reference `r^{N₀}`.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    n: usize,
    slices: Vec<usize>,
    clean: Vec<MultiCoilKSpace>,
    noise: Vec<MultiCoilKSpace>,
    reference: Vec<ComplexImage>,
    full_reference: Vec<ComplexImage>,
}

impl TrainingSet {
    /// Noise for slice `t` is drawn from `(seed, stream, [t, n])`.
    pub fn new(dataset: &Dataset, slices: &[usize], n: usize, seed: u64, stream: Stream) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::InvalidSize("no slices to train or evaluate on".into()));
        }
        let n0 = dataset.n0();
        let mut set = Self {
            n,
            slices: slices.to_vec(),
            clean: Vec::with_capacity(slices.len()),
            noise: Vec::with_capacity(slices.len()),
            reference: Vec::with_capacity(slices.len()),
            full_reference: Vec::with_capacity(slices.len()),
        };
        for &t in slices {
            let full = dataset
                .kspace
                .get(t)
                .ok_or_else(|| Error::InvalidSize(format!("slice {t} out of range ({} slices)", dataset.len())))?;
            let (clean, reference) = lowres_pair(full, &dataset.maps, n)?;
            let (_, full_ref) = lowres_pair(full, &dataset.maps, n0)?;
            set.noise.push(unit_noise(dataset.coils(), n, derive_seed(seed, stream, &[t as u64, n as u64])));
            set.clean.push(clean);
            set.reference.push(reference.pixels);
            set.full_reference.push(full_ref.pixels);
        }
        Ok(set)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    /// Dataset indices of the slices, in set order.
    pub fn slices(&self) -> &[usize] {
        &self.slices
    }

    pub fn noise(&self, i: usize) -> &MultiCoilKSpace {
        &self.noise[i]
    }

    pub fn clean(&self, i: usize) -> &MultiCoilKSpace {
        &self.clean[i]
    }

    pub fn full_reference(&self, i: usize) -> &ComplexImage {
        &self.full_reference[i]
    }

    fn sample(&self, i: usize) -> TrainingSample<'_> {
        TrainingSample { clean: &self.clean[i], noise: &self.noise[i], reference: &self.reference[i] }
    }
}

/// Heuristic starting value `σ √mean(w) N/N₀` for the TV weight: the image-
/// domain noise level of the weighted data term, floored at `1e-6`.
pub fn initial_lambda(sigma: f64, w: &AveragingPattern) -> f64 {
    (sigma * w.mean().sqrt() * w.n() as f64 / w.n0() as f64).max(1e-6)
}

fn initial_params(method: Method, w: &AveragingPattern, sigma: f64) -> ReconParams {
    match method {
        Method::ZeroFilled => ReconParams::ZeroFilled,
        Method::Apodized => ReconParams::Apodized { window: ApodizationWindow::ones(w.n()) },
        Method::SenseTv => ReconParams::SenseTv { lambda: initial_lambda(sigma, w) },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerResult {
    pub params: ReconParams,
    /// Pattern used by the final reconstructor: the uniform pattern in uniform
    /// mode, the rounded pattern in nonuniform mode.
    pub w: AveragingPattern,
    pub q: IntegerAveragingPattern,
    /// Mean training loss against `r^N` at the final parameters.
    pub inner_loss: f64,
    /// Mean training loss per epoch.
    pub curve: Vec<f64>,
    /// Largest `|Σw − budget| / budget` seen after any projection.
    pub max_budget_residual: f64,
    /// Smallest entry of any projected pattern.
    pub min_weight: f64,
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NumericalFailure(reason) | Error::InfeasibleProjection(reason) => {
            Error::TrainingDiverged { epoch, reason }
        }
        other => other,
    }
}

fn update_params(params: &mut ReconParams, grad: &ParamGradient, lr: f64) {
    match (params, grad) {
        (ReconParams::Apodized { window }, ParamGradient::Window { grad, bound, .. }) => {
            let hmax = bound.iter().cloned().fold(0.0, f64::max);
            let damp = 1e-12 * hmax + f64::MIN_POSITIVE;
            let values: Vec<f64> = window
                .values()
                .iter()
                .zip(grad.iter().zip(bound))
                .map(|(&h, (&g, &c))| (h - lr * g / (c + damp)).max(WINDOW_FLOOR))
                .collect();
            *window = ApodizationWindow::new(window.n(), values).expect("floored window is positive");
        }
        (ReconParams::SenseTv { lambda }, ParamGradient::Lambda(g)) if *g != 0.0 => {
            *lambda = (lambda.ln() - lr * g.signum()).exp();
        }
        _ => {}
    }
}


/// Trains `p` (and `w` in nonuniform mode) at the set's gridsize.
///
/// Each epoch visits the slices in a seed-derived order in batches. In
/// nonuniform mode `w` is rounded at the rounding epoch (or after the last
/// epoch when none is set) and stays fixed afterwards.
pub fn train_inner(
    problem: &DesignProblem,
    dataset: &Dataset,
    set: &TrainingSet,
    init: Option<&ReconParams>,
    seed: u64,
) -> Result<InnerResult> {
    problem.validate()?;
    let n = set.n();
    let budget = &problem.budget;
    budget.check_gridsize(n)?;
    let model = EncodingModel::new(&dataset.maps, n)?;
    let hyper = &problem.hyper;
    let sigma = budget.sigma();

    let mut w = uniform_pattern(n, budget)?;
    let mut params = match init {
        Some(p) if p.method() == problem.method => p.clone(),
        Some(p) => {
            return Err(Error::UnknownCombination(format!(
                "warm start is {} but the problem trains {}",
                p.method(),
                problem.method
            )))
        }
        None => initial_params(problem.method, &w, sigma),
    };
    let mut q: Option<IntegerAveragingPattern> = None;
    let mut curve = Vec::with_capacity(hyper.epochs);
    let mut max_residual: f64 = 0.0;
    let mut min_weight = w.effective().iter().cloned().fold(f64::INFINITY, f64::min);
    let target = budget.effective_budget(n);
    let trainable_p = problem.method != Method::ZeroFilled;

    for epoch in 0..hyper.epochs {
        if problem.mode == Mode::Nonuniform && q.is_none() && hyper.rounding_epoch == Some(epoch) {
            let rounded = round_pattern(&w, budget);
            w = effective_from_actual(&rounded, budget);
            q = Some(rounded);
        }
        let lr_p = hyper.lr_p * hyper.decay_p.powi(epoch as i32);
        let lr_w = hyper.lr_w * hyper.decay_w.powi(epoch as i32);
        let train_w = problem.mode == Mode::Nonuniform && q.is_none() && lr_w > 0.0;

        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[n as u64, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<TrainingSample> = chunk.iter().map(|&i| set.sample(i)).collect();
            let opts = GradientOptions {
                params: trainable_p && lr_p > 0.0,
                pattern: train_w,
                admm: problem.admm,
                perturbation_seed: derive_seed(seed, Stream::Perturbation, &[n as u64, epoch as u64, b as u64]),
            };
            let g = loss_and_gradients(&batch, &w, sigma, &params, &model, &opts).map_err(diverged(epoch))?;
            epoch_loss += g.loss * chunk.len() as f64;
            update_params(&mut params, &g.params, lr_p);
            if let Some(gw) = g.pattern {
                let step = normalize_gradient(&gw);
                let raw: Vec<f64> = w.effective().iter().zip(&step).map(|(v, s)| v - lr_w * s).collect();
                w = project_budget(&raw, budget).map_err(diverged(epoch))?;
                max_residual = max_residual.max((w.sum() - target).abs() / target);
                min_weight = w.effective().iter().cloned().fold(min_weight, f64::min);
            }
        }
        let mean = epoch_loss / set.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged { epoch, reason: format!("epoch loss is {mean}") });
        }
        log::debug!("N={n} {} {} epoch {epoch}: loss {mean:.6e}", problem.method, problem.mode);
        curve.push(mean);
    }

    let q = match q {
        Some(q) => q,
        None => {
            let rounded = round_pattern(&w, budget);
            if problem.mode == Mode::Nonuniform {
                w = effective_from_actual(&rounded, budget);
            }
            rounded
        }
    };

    let all: Vec<TrainingSample> = (0..set.len()).map(|i| set.sample(i)).collect();
    let opts = GradientOptions { params: false, pattern: false, admm: problem.admm, perturbation_seed: 0 };
    let inner_loss = loss_and_gradients(&all, &w, sigma, &params, &model, &opts).map_err(diverged(hyper.epochs))?.loss;

    Ok(InnerResult { params, w, q, inner_loss, curve, max_budget_residual: max_residual, min_weight })
}

/// Per-candidate outcome of the grid search.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateResult {
    pub n: usize,
    pub params: ReconParams,
    pub w: AveragingPattern,
    pub q: IntegerAveragingPattern,
    pub inner_loss: f64,
    /// Mean `‖x − r^{N₀}‖²` over the selection slices (infinite if diverged).
    pub outer_loss: f64,
    /// Pooled `sqrt(Σ‖x − r‖² / Σ‖r‖²)` over the same reconstructions.
    pub outer_nrmse: f64,
    pub outer_ssim: f64,
    pub curve: Vec<f64>,
    pub max_budget_residual: f64,
    pub diverged: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignResult {
    pub method: Method,
    pub mode: Mode,
    pub selection: Selection,
    pub n_hat: usize,
    /// One entry per candidate, in problem order.
    pub candidates: Vec<CandidateResult>,
}

impl DesignResult {
    pub fn candidate(&self, n: usize) -> Option<&CandidateResult> {
        self.candidates.iter().find(|c| c.n == n)
    }

    pub fn chosen(&self) -> &CandidateResult {
        self.candidate(self.n_hat).expect("n_hat is always a candidate")
    }

    pub fn p_hat(&self) -> &ReconParams {
        &self.chosen().params
    }

    pub fn w_hat(&self) -> &AveragingPattern {
        &self.chosen().w
    }

    pub fn q_hat(&self) -> &IntegerAveragingPattern {
        &self.chosen().q
    }
}

struct Outer {
    loss: f64,
    nrmse: f64,
    ssim: f64,
}

fn outer_metrics(
    set: &TrainingSet,
    maps: &crate::phantom::SensitivityMaps,
    w: &AveragingPattern,
    params: &ReconParams,
    budget: &AcquisitionBudget,
    admm: &crate::recon::AdmmConfig,
) -> Result<Outer> {
    let model = EncodingModel::new(maps, set.n())?;
    let per: Vec<Result<(f64, f64, f64)>> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let x = apply_noise_and_reconstruct(set.clean(i), set.noise(i), w, budget.sigma(), params, &model, admm)?;
            let r = set.full_reference(i);
            Ok((mse_loss(&x, r)?, r.norm_sqr(), ssim(&x, r)?))
        })
        .collect();
    let (mut err, mut energy, mut s) = (0.0, 0.0, 0.0);
    for p in per {
        let (e, r, q) = p?;
        err += e;
        energy += r;
        s += q;
    }
    let len = set.len() as f64;
    if !(energy > 0.0) {
        return Err(Error::DegenerateInput("selection references are all zero".into()));
    }
    Ok(Outer { loss: err / len, nrmse: (err / energy).sqrt(), ssim: s / len })
}

fn run_candidate(
    problem: &DesignProblem,
    dataset: &Dataset,
    n: usize,
    seed: u64,
    warm: Option<&DesignResult>,
) -> Result<CandidateResult> {
    let train = dataset.indices(Split::Train);
    let set = TrainingSet::new(dataset, &train, n, seed, Stream::TrainingNoise)?;
    let init = warm.and_then(|r| r.candidate(n)).filter(|c| c.diverged.is_none()).map(|c| &c.params);
    match train_inner(problem, dataset, &set, init, seed) {
        Ok(inner) => {
            let eval_set;
            let eval = match problem.selection {
                Selection::Training => &set,
                Selection::Validation => {
                    let val = dataset.indices(Split::Validation);
                    eval_set = TrainingSet::new(dataset, &val, n, seed, Stream::EvaluationNoise)?;
                    &eval_set
                }
            };
            let outer = outer_metrics(eval, &dataset.maps, &inner.w, &inner.params, &problem.budget, &problem.admm)?;
            Ok(CandidateResult {
                n,
                params: inner.params,
                w: inner.w,
                q: inner.q,
                inner_loss: inner.inner_loss,
                outer_loss: outer.loss,
                outer_nrmse: outer.nrmse,
                outer_ssim: outer.ssim,
                curve: inner.curve,
                max_budget_residual: inner.max_budget_residual,
                diverged: None,
            })
        }
        Err(Error::TrainingDiverged { epoch, reason }) => {
            log::warn!("N={n}: training diverged at epoch {epoch}: {reason}");
            let w = uniform_pattern(n, &problem.budget)?;
            let q = round_pattern(&w, &problem.budget);
            Ok(CandidateResult {
                n,
                params: initial_params(problem.method, &w, problem.budget.sigma()),
                w,
                q,
                inner_loss: f64::INFINITY,
                outer_loss: f64::INFINITY,
                outer_nrmse: f64::INFINITY,
                outer_ssim: f64::NAN,
                curve: Vec::new(),
                max_budget_residual: 0.0,
                diverged: Some(format!("epoch {epoch}: {reason}")),
            })
        }
        Err(e) => Err(e),
    }
}

/// Trains every candidate gridsize and returns the one with the lowest outer
/// loss (first in candidate order on ties). `warm` supplies starting
/// parameters per gridsize, typically the uniform-mode result.
pub fn grid_search(
    problem: &DesignProblem,
    dataset: &Dataset,
    seed: u64,
    warm: Option<&DesignResult>,
) -> Result<DesignResult> {
    problem.validate()?;
    if dataset.n0() != problem.budget.n0() {
        return Err(Error::Shape(format!("dataset n0 {} vs budget n0 {}", dataset.n0(), problem.budget.n0())));
    }
    let results: Vec<Result<CandidateResult>> =
        problem.candidates.par_iter().map(|&n| run_candidate(problem, dataset, n, seed, warm)).collect();
    let candidates = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best: Option<(usize, f64)> = None;
    for c in &candidates {
        if c.outer_loss.is_finite() && best.is_none_or(|(_, b)| c.outer_loss < b) {
            best = Some((c.n, c.outer_loss));
        }
    }
    let (n_hat, _) = best.ok_or_else(|| Error::TrainingDiverged {
        epoch: problem.hyper.epochs,
        reason: "every candidate gridsize diverged".into(),
    })?;
    Ok(DesignResult { method: problem.method, mode: problem.mode, selection: problem.selection, n_hat, candidates })
}
