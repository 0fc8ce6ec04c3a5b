// SPDX-License-Identifier: Apache-2.0

//! Image-quality metrics. NRMSE and the training loss act on complex images;
//! SSIM acts on magnitudes.

use crate::error::{Error, Result};
use crate::grid::ComplexImage;

fn same_shape(x: &ComplexImage, r: &ComplexImage) -> Result<()> {
    if x.n() != r.n() {
        return Err(Error::Shape(format!("{}x{} vs {}x{}", x.n(), x.n(), r.n(), r.n())));
    }
    Ok(())
}

/// `J(x, r) = ‖x − r‖₂²`.
pub fn mse_loss(x: &ComplexImage, r: &ComplexImage) -> Result<f64> {
    same_shape(x, r)?;
    Ok(x.data().iter().zip(r.data()).map(|(a, b)| (a - b).norm_sqr()).sum())
}

/// `‖x − r‖₂ / ‖r‖₂`.
pub fn nrmse(x: &ComplexImage, r: &ComplexImage) -> Result<f64> {
    let num = mse_loss(x, r)?;
    let den = r.norm_sqr();
    if den == 0.0 {
        return Err(Error::DegenerateInput("NRMSE reference is all zero".into()));
    }
    Ok((num / den).sqrt())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let h = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - h;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Symmetric (edge-repeating) reflection of `i` into `[0, n)`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

fn blur(img: &[f64], n: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let h = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                acc += w * img[r * n + reflect(c as isize + t as isize - h, n)];
            }
            tmp[r * n + c] = acc;
        }
    }
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                acc += w * tmp[reflect(r as isize + t as isize - h, n) * n + c];
            }
            out[r * n + c] = acc;
        }
    }
    out
}

/// Mean structural similarity of the magnitude images, 11×11 Gaussian window
/// (σ = 1.5), `K1 = 0.01`, `K2 = 0.03`, dynamic range `max |r|`, symmetric
/// boundary padding. An all-zero reference falls back to unit dynamic range.
pub fn ssim(x: &ComplexImage, r: &ComplexImage) -> Result<f64> {
    same_shape(x, r)?;
    let n = x.n();
    let a = x.magnitude();
    let b = r.magnitude();
    let mut range = b.iter().cloned().fold(0.0, f64::max);
    if range == 0.0 {
        range = 1.0;
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let k = gaussian_kernel();
    let mu_a = blur(&a, n, &k);
    let mu_b = blur(&b, n, &k);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u * v).collect();
    let e_aa = blur(&aa, n, &k);
    let e_bb = blur(&bb, n, &k);
    let e_ab = blur(&ab, n, &k);
    let mut total = 0.0;
    for i in 0..n * n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += (num / den).clamp(-1.0, 1.0);
    }
    Ok(total / (n * n) as f64)
}

/// Per-slice NRMSE and SSIM with summary statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub nrmse: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn push(&mut self, x: &ComplexImage, r: &ComplexImage) -> Result<()> {
        self.nrmse.push(nrmse(x, r)?);
        self.ssim.push(ssim(x, r)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nrmse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nrmse.is_empty()
    }

    pub fn nrmse_stats(&self) -> (f64, f64) {
        mean_std(&self.nrmse)
    }

    pub fn ssim_stats(&self) -> (f64, f64) {
        mean_std(&self.ssim)
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
