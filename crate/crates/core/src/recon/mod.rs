// SPDX-License-Identifier: Apache-2.0

//! Reconstruction functions `x̂ = g_{p,N,w}(d)` mapping averaged `N × N`
//! multi-coil data to an `n0 × n0` image.
//!
//! Three methods are provided: zero-filled SENSE combination, apodized linear
//! filtering (a trainable positive k-space window), and SENSE-TV solved with
//! ADMM (trainable regularisation weight). Learned reconstructors would slot in
//! as further [`Method`] variants with their own [`ReconParams`] payload.

mod admm;
mod grad;
pub mod tv;

pub use admm::{sense_tv_objective, sense_tv_recon, AdmmConfig, Rho, SenseTvOutput, SolveStatus};
pub use grad::{loss_and_gradients, GradientOptions, LossGradients, ParamGradient, TrainingSample};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{centered_to_fft, ComplexImage, Fft2, C64};
use crate::kspace::{AveragingPattern, MultiCoilKSpace};
use crate::phantom::{coil_images, SensitivityMaps};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    ZeroFilled,
    Apodized,
    SenseTv,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ZeroFilled => "zero-filled",
            Method::Apodized => "apodized",
            Method::SenseTv => "sense-tv",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-filled" => Ok(Method::ZeroFilled),
            "apodized" => Ok(Method::Apodized),
            "sense-tv" => Ok(Method::SenseTv),
            other => Err(Error::UnknownCombination(format!("unknown method '{other}'"))),
        }
    }
}

/// Real, strictly positive k-space window on an `N × N` grid (FFT order).
#[derive(Clone, Debug, PartialEq)]
pub struct ApodizationWindow {
    n: usize,
    values: Vec<f64>,
}

impl ApodizationWindow {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!("window needs {} values, got {}", n * n, values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("window values must be finite and > 0, found {v}")));
        }
        Ok(Self { n, values })
    }

    pub fn ones(n: usize) -> Self {
        Self { n, values: vec![1.0; n * n] }
    }

    /// Builds a window from values listed in centered order
    /// (rows `m = -N/2 …`, columns `k = -N/2 …`).
    pub fn from_centered(n: usize, centered: &[f64]) -> Result<Self> {
        if centered.len() != n * n {
            return Err(Error::Shape(format!("window needs {} values, got {}", n * n, centered.len())));
        }
        let mut values = vec![0.0; n * n];
        let h = (n / 2) as isize;
        for (i, m) in (-h..h).enumerate() {
            for (j, k) in (-h..h).enumerate() {
                values[centered_to_fft(m, n) * n + centered_to_fft(k, n)] = centered[i * n + j];
            }
        }
        Self::new(n, values)
    }

    pub fn to_centered(&self) -> Vec<f64> {
        let n = self.n;
        let h = (n / 2) as isize;
        let mut out = Vec::with_capacity(n * n);
        for m in -h..h {
            for k in -h..h {
                out.push(self.values[centered_to_fft(m, n) * n + centered_to_fft(k, n)]);
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Trainable parameters `p` of a reconstruction method.
#[derive(Clone, Debug, PartialEq)]
pub enum ReconParams {
    ZeroFilled,
    Apodized { window: ApodizationWindow },
    SenseTv { lambda: f64 },
}

impl ReconParams {
    pub fn method(&self) -> Method {
        match self {
            ReconParams::ZeroFilled => Method::ZeroFilled,
            ReconParams::Apodized { .. } => Method::Apodized,
            ReconParams::SenseTv { .. } => Method::SenseTv,
        }
    }

    pub fn sense_tv(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(ReconParams::SenseTv { lambda })
    }
}

/// Forward model `E`: sensitivity weighting, unitary DFT on the `n0` grid and
/// restriction to the central `N × N` block.
#[derive(Clone, Copy, Debug)]
pub struct EncodingModel<'a> {
    maps: &'a SensitivityMaps,
    n: usize,
}

impl<'a> EncodingModel<'a> {
    pub fn new(maps: &'a SensitivityMaps, n: usize) -> Result<Self> {
        let n0 = maps.n0();
        if n < 2 || !n.is_multiple_of(2) || n > n0 {
            return Err(Error::InvalidGridsize { n, reason: "acquisition gridsize must be even and <= n0" });
        }
        Ok(Self { maps, n })
    }

    pub fn maps(&self) -> &'a SensitivityMaps {
        self.maps
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n0(&self) -> usize {
        self.maps.n0()
    }

    pub fn coils(&self) -> usize {
        self.maps.coils()
    }

    fn check_image(&self, x: &ComplexImage) -> Result<()> {
        if x.n() != self.n0() {
            return Err(Error::Shape(format!("image is {}x{}, model expects {}", x.n(), x.n(), self.n0())));
        }
        Ok(())
    }

    pub(crate) fn check_data(&self, d: &MultiCoilKSpace) -> Result<()> {
        if d.n() != self.n || d.coils() != self.coils() {
            return Err(Error::Shape(format!(
                "data is {} coils at {}, model expects {} coils at {}",
                d.coils(),
                d.n(),
                self.coils(),
                self.n
            )));
        }
        Ok(())
    }

    /// Storage indices on the `n0` grid of the acquired `N × N` block, paired
    /// with the matching indices on the `N` grid.
    fn block(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (n, n0) = (self.n, self.n0());
        let h = (n / 2) as isize;
        (-h..h).flat_map(move |m| {
            (-h..h).map(move |k| {
                (
                    centered_to_fft(m, n0) * n0 + centered_to_fft(k, n0),
                    centered_to_fft(m, n) * n + centered_to_fft(k, n),
                )
            })
        })
    }

    pub fn encode(&self, x: &ComplexImage) -> Result<MultiCoilKSpace> {
        self.check_image(x)?;
        let n0 = self.n0();
        let fft = Fft2::plan(n0);
        let mut out = MultiCoilKSpace::zeros(self.coils(), self.n);
        let mut buf = vec![C64::new(0.0, 0.0); n0 * n0];
        for l in 0..self.coils() {
            for ((b, s), v) in buf.iter_mut().zip(self.maps.coil(l)).zip(x.data()) {
                *b = s * v;
            }
            fft.forward(&mut buf);
            let dst = out.coil_mut(l);
            for (big, small) in self.block() {
                dst[small] = buf[big];
            }
        }
        Ok(out)
    }

    /// `Eᴴ y = Σ_ℓ conj(S_ℓ) · F⁻¹(zero-pad(y_ℓ))`.
    pub fn adjoint(&self, y: &MultiCoilKSpace) -> Result<ComplexImage> {
        self.check_data(y)?;
        let n0 = self.n0();
        let fft = Fft2::plan(n0);
        let mut acc = vec![C64::new(0.0, 0.0); n0 * n0];
        let mut buf = vec![C64::new(0.0, 0.0); n0 * n0];
        for l in 0..self.coils() {
            buf.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            let src = y.coil(l);
            for (big, small) in self.block() {
                buf[big] = src[small];
            }
            fft.inverse(&mut buf);
            for ((a, s), b) in acc.iter_mut().zip(self.maps.coil(l)).zip(&buf) {
                *a += s.conj() * b;
            }
        }
        ComplexImage::from_vec(n0, acc)
    }

    /// Prepared `Eᴴ W E` for the pattern `w`.
    pub fn normal_operator(&self, w: &AveragingPattern) -> Result<NormalOperator<'a>> {
        NormalOperator::new(*self, w)
    }
}

/// `x ↦ Eᴴ W E x` with the DFT pruned to the acquired columns: every coil costs
/// `2 (n0 + N)` length-`n0` transforms instead of `4 n0`.
pub struct NormalOperator<'a> {
    maps: &'a SensitivityMaps,
    n0: usize,
    /// `n0`-grid storage columns of the acquired block.
    cols: Vec<usize>,
    /// Line weight of every `n0`-grid storage row (zero outside the block),
    /// with the unitary scaling folded in.
    row_weight: Vec<f64>,
    fft: std::sync::Arc<Fft2>,
    scratch: Vec<C64>,
    buf: Vec<C64>,
    sub: Vec<C64>,
}

impl<'a> NormalOperator<'a> {
    fn new(model: EncodingModel<'a>, w: &AveragingPattern) -> Result<Self> {
        let (n, n0) = (model.n, model.n0());
        if w.n() != n {
            return Err(Error::Shape(format!("pattern has {} lines, model expects {n}", w.n())));
        }
        let h = (n / 2) as isize;
        let cols: Vec<usize> = (-h..h).map(|k| centered_to_fft(k, n0)).collect();
        let mut row_weight = vec![0.0; n0];
        let scale = 1.0 / (n0 * n0) as f64;
        for m in -h..h {
            row_weight[centered_to_fft(m, n0)] = w.at_row(centered_to_fft(m, n)) * scale;
        }
        let fft = Fft2::plan(n0);
        let scratch = vec![C64::new(0.0, 0.0); fft.scratch_len()];
        Ok(Self {
            maps: model.maps,
            n0,
            cols,
            row_weight,
            fft,
            scratch,
            buf: vec![C64::new(0.0, 0.0); n0 * n0],
            sub: vec![C64::new(0.0, 0.0); n * n0],
        })
    }

    pub fn apply(&mut self, x: &[C64], out: &mut [C64]) {
        let n0 = self.n0;
        assert_eq!(x.len(), n0 * n0, "image has wrong size");
        assert_eq!(out.len(), n0 * n0, "output has wrong size");
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for l in 0..self.maps.coils() {
            let s = self.maps.coil(l);
            for ((b, sv), v) in self.buf.iter_mut().zip(s).zip(x) {
                *b = sv * v;
            }
            self.fft.rows_forward(&mut self.buf, &mut self.scratch);
            for (j, &c) in self.cols.iter().enumerate() {
                let dst = &mut self.sub[j * n0..(j + 1) * n0];
                for (r, d) in dst.iter_mut().enumerate() {
                    *d = self.buf[r * n0 + c];
                }
            }
            self.fft.rows_forward(&mut self.sub, &mut self.scratch);
            for col in self.sub.chunks_mut(n0) {
                for (v, &wr) in col.iter_mut().zip(&self.row_weight) {
                    *v *= wr;
                }
            }
            self.fft.rows_inverse(&mut self.sub, &mut self.scratch);
            self.buf.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            for (j, &c) in self.cols.iter().enumerate() {
                let src = &self.sub[j * n0..(j + 1) * n0];
                for (r, v) in src.iter().enumerate() {
                    self.buf[r * n0 + c] = *v;
                }
            }
            self.fft.rows_inverse(&mut self.buf, &mut self.scratch);
            for ((o, sv), b) in out.iter_mut().zip(s).zip(&self.buf) {
                *o += sv.conj() * b;
            }
        }
    }
}

/// Zero-pad to `n0`, inverse DFT per coil, SENSE-combine.
pub fn zero_filled_recon(d: &MultiCoilKSpace, model: &EncodingModel) -> Result<ComplexImage> {
    model.check_data(d)?;
    let imgs = coil_images(d, model.n0())?;
    Ok(model.maps().combine(&imgs))
}

pub(crate) fn apply_window(d: &MultiCoilKSpace, window: &ApodizationWindow) -> Result<MultiCoilKSpace> {
    if window.n() != d.n() {
        return Err(Error::Shape(format!("window is {}x{}, data is {}x{}", window.n(), window.n(), d.n(), d.n())));
    }
    let mut out = d.clone();
    for l in 0..d.coils() {
        for (v, h) in out.coil_mut(l).iter_mut().zip(window.values()) {
            *v *= *h;
        }
    }
    Ok(out)
}

/// Multiplies every coil by the window, then reconstructs as zero-filled.
pub fn apodized_recon(d: &MultiCoilKSpace, window: &ApodizationWindow, model: &EncodingModel) -> Result<ComplexImage> {
    model.check_data(d)?;
    zero_filled_recon(&apply_window(d, window)?, model)
}

/// Copy of `d` with the lines that `w` leaves unacquired set to zero.
pub fn mask_unacquired(d: &MultiCoilKSpace, w: &AveragingPattern) -> Result<MultiCoilKSpace> {
    let n = d.n();
    if w.n() != n {
        return Err(Error::Shape(format!("pattern has {} lines, data has {n}", w.n())));
    }
    let mut out = d.clone();
    for l in 0..d.coils() {
        for (r, row) in out.coil_mut(l).chunks_mut(n).enumerate() {
            if w.at_row(r) == 0.0 {
                row.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            }
        }
    }
    Ok(out)
}

/// `g_{p,N,w}(d)` for any supported method. Data on zero-weight lines is
/// ignored by every method.
pub fn reconstruct(
    d: &MultiCoilKSpace,
    w: &AveragingPattern,
    params: &ReconParams,
    model: &EncodingModel,
    admm: &AdmmConfig,
) -> Result<ComplexImage> {
    let masked;
    let d = if w.has_zero_lines() {
        masked = mask_unacquired(d, w)?;
        &masked
    } else {
        d
    };
    match params {
        ReconParams::ZeroFilled => zero_filled_recon(d, model),
        ReconParams::Apodized { window } => apodized_recon(d, window, model),
        ReconParams::SenseTv { lambda } => Ok(sense_tv_recon(d, w, *lambda, model, admm)?.image),
    }
}

/// Simulates `d = s + σ w^{-1/2} ⊙ z` for a fixed unit-noise realisation and
/// reconstructs it.
pub fn apply_noise_and_reconstruct(
    clean: &MultiCoilKSpace,
    noise: &MultiCoilKSpace,
    w: &AveragingPattern,
    sigma: f64,
    params: &ReconParams,
    model: &EncodingModel,
    admm: &AdmmConfig,
) -> Result<ComplexImage> {
    let d = crate::kspace::apply_noise(clean, noise, w, sigma)?;
    reconstruct(&d, w, params, model, admm)
}

#[cfg(test)]
mod tests;
