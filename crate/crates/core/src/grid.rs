// SPDX-License-Identifier: Apache-2.0

//! Square complex grids and unitary 2-D DFTs.
//!
//! K-space arrays are stored in FFT order: DC sits at storage index `(0, 0)` and
//! centered index `m ∈ [-N/2, N/2)` lives at `m mod N`. The helpers below map
//! between the two conventions so callers never need an explicit fftshift.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Storage index of centered index `m` on a grid of size `n`.
#[inline]
pub fn centered_to_fft(m: isize, n: usize) -> usize {
    m.rem_euclid(n as isize) as usize
}

/// Centered index of storage index `k` on a grid of size `n`.
#[inline]
pub fn fft_to_centered(k: usize, n: usize) -> isize {
    if k < n / 2 {
        k as isize
    } else {
        k as isize - n as isize
    }
}

/// Maps a storage row to the position of its phase-encoding line in a pattern
/// vector ordered by centered index (`line = m + N/2`). The map is an involution.
#[inline]
pub fn line_of_row(row: usize, n: usize) -> usize {
    (row + n / 2) % n
}

/// Row-major `n × n` complex image.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    n: usize,
    data: Vec<C64>,
}

impl ComplexImage {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![C64::new(0.0, 0.0); n * n] }
    }

    pub fn from_vec(n: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!("expected {} pixels, got {}", n * n, data.len())));
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                data.push(f(r, c));
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.n + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.data[r * self.n + c] = v;
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.norm()).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Cached unitary 2-D FFT for one grid size.
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    /// Returns the shared plan for size `n`.
    pub fn plan(n: usize) -> Arc<Fft2> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Fft2>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("fft plan cache poisoned");
        guard
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Fft2 { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) })
            })
            .clone()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// In-place unitary forward DFT of a row-major `n × n` buffer.
    pub fn forward(&self, data: &mut [C64]) {
        self.run(data, &self.fwd);
    }

    /// In-place unitary inverse DFT of a row-major `n × n` buffer.
    pub fn inverse(&self, data: &mut [C64]) {
        self.run(data, &self.inv);
    }

    pub(crate) fn scratch_len(&self) -> usize {
        self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len())
    }

    /// Unnormalised forward 1-D DFT of every contiguous length-`n` chunk.
    pub(crate) fn rows_forward(&self, data: &mut [C64], scratch: &mut [C64]) {
        self.fwd.process_with_scratch(data, scratch);
    }

    /// Unnormalised inverse 1-D DFT of every contiguous length-`n` chunk.
    pub(crate) fn rows_inverse(&self, data: &mut [C64], scratch: &mut [C64]) {
        self.inv.process_with_scratch(data, scratch);
    }

    fn run(&self, data: &mut [C64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), n * n, "fft buffer has wrong length");
        let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(data, &mut scratch);
        let mut tmp = vec![C64::new(0.0, 0.0); n * n];
        transpose(data, &mut tmp, n);
        fft.process_with_scratch(&mut tmp, &mut scratch);
        let s = 1.0 / n as f64;
        for r in 0..n {
            for c in 0..n {
                data[c * n + r] = tmp[r * n + c] * s;
            }
        }
    }
}

fn transpose(src: &[C64], dst: &mut [C64], n: usize) {
    const B: usize = 16;
    for rb in (0..n).step_by(B) {
        for cb in (0..n).step_by(B) {
            for r in rb..(rb + B).min(n) {
                for c in cb..(cb + B).min(n) {
                    dst[c * n + r] = src[r * n + c];
                }
            }
        }
    }
}

pub fn fft2(img: &ComplexImage) -> ComplexImage {
    let mut out = img.clone();
    Fft2::plan(img.n()).forward(out.data_mut());
    out
}

pub fn ifft2(img: &ComplexImage) -> ComplexImage {
    let mut out = img.clone();
    Fft2::plan(img.n()).inverse(out.data_mut());
    out
}

/// Hermitian inner product `⟨a, b⟩ = Σ conj(a)·b`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[C64], n: usize, sign: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); n * n];
        for k1 in 0..n {
            for k2 in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for p1 in 0..n {
                    for p2 in 0..n {
                        let ph = sign * 2.0 * std::f64::consts::PI * ((k1 * p1 + k2 * p2) as f64) / n as f64;
                        acc += x[p1 * n + p2] * C64::from_polar(1.0, ph);
                    }
                }
                out[k1 * n + k2] = acc / n as f64;
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft() {
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<C64> = (0..n * n).map(|_| C64::new(rng.gen(), rng.gen())).collect();
        let img = ComplexImage::from_vec(n, x.clone()).unwrap();
        let f = fft2(&img);
        let oracle = naive_dft(&x, n, -1.0);
        for (a, b) in f.data().iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-12);
        }
        let back = ifft2(&f);
        for (a, b) in back.data().iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_image_is_dc_impulse() {
        let n = 8;
        let img = ComplexImage::from_fn(n, |_, _| C64::new(1.0, 0.0));
        let f = fft2(&img);
        assert!((f.get(0, 0) - C64::new(n as f64, 0.0)).norm() < 1e-12);
        let rest: f64 = f.data()[1..].iter().map(|v| v.norm()).sum();
        assert!(rest < 1e-12);
    }

    #[test]
    fn index_maps_roundtrip() {
        for n in [2usize, 4, 8, 64] {
            for k in 0..n {
                assert_eq!(centered_to_fft(fft_to_centered(k, n), n), k);
                assert_eq!(line_of_row(line_of_row(k, n), n), k);
            }
            assert_eq!(line_of_row(0, n), n / 2);
            assert_eq!(fft_to_centered(n / 2, n), -(n as isize) / 2);
        }
    }
}
