// SPDX-License-Identifier: Apache-2.0

//! Batch loss `mean_t ‖g_{p,N,w}(s_t + σ w^{-1/2} ⊙ z_t) − r_t‖²` and its
//! gradients with respect to the reconstruction parameters and the averaging
//! pattern.
//!
//! The apodized pipeline is linear in both `h` and `d`, so its gradients are
//! closed-form. SENSE-TV gradients are estimated: `λ` by a central difference,
//! `w` by simultaneous perturbation with Rademacher directions.

use rand::Rng;
use rayon::prelude::*;

use super::{apodized_recon, sense_tv_recon, AdmmConfig, EncodingModel, ReconParams};
use crate::error::{Error, Result};
use crate::grid::{ComplexImage, Fft2, C64};
use crate::kspace::{apply_noise, crop_kspace, AveragingPattern, MultiCoilKSpace};
use crate::metrics::mse_loss;
use crate::rng::{stream_rng, Stream};

/// Relative step of the `λ` central difference.
pub const LAMBDA_STEP: f64 = 1e-3;
/// Simultaneous-perturbation magnitude relative to `mean(w)`.
pub const SPSA_SCALE: f64 = 1e-2;

/// One training item at gridsize `N`.
#[derive(Clone, Copy, Debug)]
pub struct TrainingSample<'a> {
    /// Noise-free k-space cropped to `N × N`.
    pub clean: &'a MultiCoilKSpace,
    /// Fixed unit-variance noise realisation on the same grid.
    pub noise: &'a MultiCoilKSpace,
    /// Reference image on the `n0` grid.
    pub reference: &'a ComplexImage,
}

#[derive(Clone, Copy, Debug)]
pub struct GradientOptions {
    pub params: bool,
    pub pattern: bool,
    pub admm: AdmmConfig,
    /// Seed of the perturbation directions (SENSE-TV only).
    pub perturbation_seed: u64,
}

impl Default for GradientOptions {
    fn default() -> Self {
        Self { params: true, pattern: true, admm: AdmmConfig::default(), perturbation_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamGradient {
    None,
    /// Window gradient (FFT order) with two curvature measures of the batch
    /// loss, which is quadratic in `h`: the exact Hessian diagonal and the
    /// Gershgorin row-sum bound `Σ_k' |H_kk'|`, which dominates the Hessian so
    /// that `h − g / bound` never increases the batch loss.
    Window {
        grad: Vec<f64>,
        diagonal: Vec<f64>,
        bound: Vec<f64>,
    },
    Lambda(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGradients {
    pub loss: f64,
    pub params: ParamGradient,
    /// `∂loss/∂w_m` indexed by line (entry `i` ↔ line `i − N/2`).
    pub pattern: Option<Vec<f64>>,
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericalFailure(format!("non-finite {what}")))
    }
}

fn check_batch(batch: &[TrainingSample], w: &AveragingPattern, model: &EncodingModel) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    if w.n() != model.n() {
        return Err(Error::Shape(format!("pattern has {} lines, model expects {}", w.n(), model.n())));
    }
    for s in batch {
        model.check_data(s.clean)?;
        model.check_data(s.noise)?;
        if s.reference.n() != model.n0() {
            return Err(Error::Shape("reference is not on the n0 grid".into()));
        }
    }
    Ok(())
}

/// Batch loss and requested gradients. `w` may lie off the budget surface;
/// lines with `w_m = 0` are unacquired and get a zero pattern gradient.
pub fn loss_and_gradients(
    batch: &[TrainingSample],
    w: &AveragingPattern,
    sigma: f64,
    params: &ReconParams,
    model: &EncodingModel,
    opts: &GradientOptions,
) -> Result<LossGradients> {
    check_batch(batch, w, model)?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    match params {
        ReconParams::ZeroFilled => {
            let ones = super::ApodizationWindow::ones(model.n());
            let mut out = linear_gradients(batch, w, sigma, &ones, model, false, opts.pattern)?;
            out.params = ParamGradient::None;
            Ok(out)
        }
        ReconParams::Apodized { window } => {
            if window.n() != model.n() {
                return Err(Error::Shape(format!("window is {0}x{0}, model expects {1}", window.n(), model.n())));
            }
            linear_gradients(batch, w, sigma, window, model, opts.params, opts.pattern)
        }
        ReconParams::SenseTv { lambda } => sense_tv_gradients(batch, w, sigma, *lambda, model, opts),
    }
}

struct SampleTerms {
    loss: f64,
    grad_h: Vec<f64>,
    curv_h: Vec<f64>,
    bound_h: Vec<f64>,
    grad_w: Vec<f64>,
}

/// Spectrum of `g(Δ) = ‖G(Δ)‖_F`, where
/// `G_ab(Δ) = Σ_p conj(c_a(p)) c_b(p) e^{2πiΔ·p/n0}` couples window entries
/// `Δ` apart through the combination weights `c_ℓ = conj(S_ℓ)/Σ|S|²`.
fn coupling_spectrum(model: &EncodingModel) -> Vec<C64> {
    let maps = model.maps();
    let n0 = model.n0();
    let coils = model.coils();
    let fft = Fft2::plan(n0);
    let rss = maps.sum_of_squares();
    let weights: Vec<Vec<C64>> = (0..coils)
        .map(|l| {
            maps.coil(l)
                .iter()
                .zip(rss)
                .map(|(s, &r)| if r > 0.0 { s.conj() / r } else { C64::new(0.0, 0.0) })
                .collect()
        })
        .collect();
    let mut g2 = vec![0.0; n0 * n0];
    let mut buf = vec![C64::new(0.0, 0.0); n0 * n0];
    for a in 0..coils {
        for b in 0..coils {
            for ((v, ca), cb) in buf.iter_mut().zip(&weights[a]).zip(&weights[b]) {
                *v = ca.conj() * cb;
            }
            // unitary inverse DFT carries 1/n0 of the n0² needed
            fft.inverse(&mut buf);
            for (acc, v) in g2.iter_mut().zip(&buf) {
                *acc += v.norm_sqr() * (n0 * n0) as f64;
            }
        }
    }
    let mut g: Vec<C64> = g2.iter().map(|v| C64::new(v.sqrt(), 0.0)).collect();
    fft.forward(&mut g);
    g
}

fn linear_gradients(
    batch: &[TrainingSample],
    w: &AveragingPattern,
    sigma: f64,
    window: &super::ApodizationWindow,
    model: &EncodingModel,
    want_h: bool,
    want_w: bool,
) -> Result<LossGradients> {
    let n = model.n();
    let n0 = model.n0();
    let coils = model.coils();
    let maps = model.maps();
    let gram = maps.combine_gram();
    let fft = Fft2::plan(n0);
    let spectrum = if want_h { coupling_spectrum(model) } else { Vec::new() };
    let block: Vec<usize> = {
        let h = (n / 2) as isize;
        (-h..h)
            .flat_map(|m| (-h..h).map(move |k| (m, k)))
            .map(|(m, k)| {
                use crate::grid::centered_to_fft;
                (
                    centered_to_fft(m, n) * n + centered_to_fft(k, n),
                    centered_to_fft(m, n0) * n0 + centered_to_fft(k, n0),
                )
            })
            .fold(vec![0; n * n], |mut v, (small, big)| {
                v[small] = big;
                v
            })
    };

    let terms: Vec<Result<SampleTerms>> = batch
        .par_iter()
        .map(|s| {
            let d = apply_noise(s.clean, s.noise, w, sigma)?;
            let x = apodized_recon(&d, window, model)?;
            let loss = mse_loss(&x, s.reference)?;
            let mut t =
                SampleTerms { loss, grad_h: Vec::new(), curv_h: Vec::new(), bound_h: Vec::new(), grad_w: Vec::new() };
            if !want_h && !want_w {
                return Ok(t);
            }
            // g_ℓ = crop(F(S_ℓ e / Σ|S|²)), the back-projection of the residual
            let e = ComplexImage::from_vec(n0, x.data().iter().zip(s.reference.data()).map(|(a, b)| a - b).collect())?;
            let mut back = maps.combine_adjoint(&e);
            for chunk in back.chunks_mut(n0 * n0) {
                fft.forward(chunk);
            }
            let g = crop_kspace(&MultiCoilKSpace::from_vec(coils, n0, back)?, n)?;

            if want_h {
                t.grad_h = vec![0.0; n * n];
                t.curv_h = vec![0.0; n * n];
                let scale = 2.0 / (n0 * n0) as f64;
                for (k, (gh, ch)) in t.grad_h.iter_mut().zip(t.curv_h.iter_mut()).enumerate() {
                    let mut acc = 0.0;
                    for l in 0..coils {
                        acc += (g.coil(l)[k].conj() * d.coil(l)[k]).re;
                    }
                    *gh = 2.0 * acc;
                    let mut q = C64::new(0.0, 0.0);
                    for a in 0..coils {
                        let da = d.coil(a)[k].conj();
                        for b in 0..coils {
                            q += da * gram[a * coils + b] * d.coil(b)[k];
                        }
                    }
                    *ch = scale * q.re;
                }
                // bound_k = (2/n0²) ‖d_k‖ Σ_k' g(k' − k) ‖d_k'‖ by circular convolution on the n0 grid
                let norms: Vec<f64> =
                    (0..n * n).map(|k| (0..coils).map(|l| d.coil(l)[k].norm_sqr()).sum::<f64>().sqrt()).collect();
                let mut u = vec![C64::new(0.0, 0.0); n0 * n0];
                for (k, &big) in block.iter().enumerate() {
                    u[big] = C64::new(norms[k], 0.0);
                }
                fft.forward(&mut u);
                for (v, gs) in u.iter_mut().zip(&spectrum) {
                    *v *= gs;
                }
                fft.inverse(&mut u);
                t.bound_h = block.iter().zip(&norms).map(|(&big, &nk)| scale * nk * u[big].re * n0 as f64).collect();
            }
            if want_w {
                t.grad_w = vec![0.0; n];
                let h = window.values();
                for r in 0..n {
                    let wm = w.at_row(r);
                    if wm == 0.0 {
                        continue;
                    }
                    let dd = -0.5 * sigma * wm.powf(-1.5);
                    let mut acc = 0.0;
                    for l in 0..coils {
                        let (gl, zl) = (g.coil(l), s.noise.coil(l));
                        for c in 0..n {
                            let k = r * n + c;
                            acc += (gl[k].conj() * zl[k]).re * h[k];
                        }
                    }
                    t.grad_w[crate::grid::line_of_row(r, n)] = 2.0 * dd * acc;
                }
            }
            Ok(t)
        })
        .collect();

    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad_h = if want_h { vec![0.0; n * n] } else { Vec::new() };
    let mut curv_h = grad_h.clone();
    let mut bound_h = grad_h.clone();
    let mut grad_w = if want_w { vec![0.0; n] } else { Vec::new() };
    for t in terms {
        let t = t?;
        loss += t.loss * inv;
        for (a, b) in grad_h.iter_mut().zip(&t.grad_h) {
            *a += b * inv;
        }
        for (a, b) in curv_h.iter_mut().zip(&t.curv_h) {
            *a += b * inv;
        }
        for (a, b) in bound_h.iter_mut().zip(&t.bound_h) {
            *a += b * inv;
        }
        for (a, b) in grad_w.iter_mut().zip(&t.grad_w) {
            *a += b * inv;
        }
    }
    finite(loss, "loss")?;
    if grad_h.iter().chain(&grad_w).any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite gradient".into()));
    }
    Ok(LossGradients {
        loss,
        params: if want_h {
            ParamGradient::Window { grad: grad_h, diagonal: curv_h, bound: bound_h }
        } else {
            ParamGradient::None
        },
        pattern: want_w.then_some(grad_w),
    })
}

fn sense_tv_loss(
    batch: &[TrainingSample],
    w: &AveragingPattern,
    sigma: f64,
    lambda: f64,
    model: &EncodingModel,
    admm: &AdmmConfig,
) -> Result<f64> {
    let losses: Vec<Result<f64>> = batch
        .par_iter()
        .map(|s| {
            let d = apply_noise(s.clean, s.noise, w, sigma)?;
            let x = sense_tv_recon(&d, w, lambda, model, admm)?.image;
            mse_loss(&x, s.reference)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    finite(total / batch.len() as f64, "loss")
}

/// Mean over the batch of per-sample two-sided estimates
/// `(J_t(w + δ_t) − J_t(w − δ_t)) / (2δ_t)`, each sample with its own
/// Rademacher direction `δ_t` of magnitude `min(c·mean(w), w_m/2)`.
fn spsa_pattern_gradient(
    batch: &[TrainingSample],
    w: &AveragingPattern,
    sigma: f64,
    lambda: f64,
    model: &EncodingModel,
    opts: &GradientOptions,
) -> Result<Vec<f64>> {
    let n = w.n();
    let base = SPSA_SCALE * w.mean();
    let estimates: Vec<Result<Vec<f64>>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream_rng(opts.perturbation_seed, Stream::Perturbation, &[n as u64, i as u64]);
            let step: Vec<f64> = w
                .effective()
                .iter()
                .map(|&wm| {
                    let c = base.min(0.5 * wm);
                    if rng.gen::<bool>() {
                        c
                    } else {
                        -c
                    }
                })
                .collect();
            let plus = w.probe(w.effective().iter().zip(&step).map(|(a, d)| a + d).collect());
            let minus = w.probe(w.effective().iter().zip(&step).map(|(a, d)| a - d).collect());
            let one = std::slice::from_ref(s);
            let diff = sense_tv_loss(one, &plus, sigma, lambda, model, &opts.admm)?
                - sense_tv_loss(one, &minus, sigma, lambda, model, &opts.admm)?;
            Ok(step.iter().map(|&d| if d == 0.0 { 0.0 } else { diff / (2.0 * d) }).collect())
        })
        .collect();
    let mut g = vec![0.0; n];
    let inv = 1.0 / batch.len() as f64;
    for e in estimates {
        for (a, b) in g.iter_mut().zip(e?) {
            *a += b * inv;
        }
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite pattern gradient".into()));
    }
    Ok(g)
}

fn sense_tv_gradients(
    batch: &[TrainingSample],
    w: &AveragingPattern,
    sigma: f64,
    lambda: f64,
    model: &EncodingModel,
    opts: &GradientOptions,
) -> Result<LossGradients> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let admm = &opts.admm;
    let mut params = ParamGradient::None;
    let loss;
    if opts.params {
        let h = LAMBDA_STEP * lambda.max(1e-3);
        let (lo, hi) = ((lambda - h).max(0.0), lambda + h);
        let l_hi = sense_tv_loss(batch, w, sigma, hi, model, admm)?;
        let l_lo = sense_tv_loss(batch, w, sigma, lo, model, admm)?;
        params = ParamGradient::Lambda(finite((l_hi - l_lo) / (hi - lo), "lambda gradient")?);
        loss = 0.5 * (l_hi + l_lo);
    } else {
        loss = sense_tv_loss(batch, w, sigma, lambda, model, admm)?;
    }

    let pattern = if opts.pattern { Some(spsa_pattern_gradient(batch, w, sigma, lambda, model, opts)?) } else { None };
    Ok(LossGradients { loss, params, pattern })
}
