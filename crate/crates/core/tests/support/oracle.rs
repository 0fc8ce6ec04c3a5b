// SPDX-License-Identifier: Apache-2.0

//! Reference solvers and problem generators shared by the integration and
//! acceptance tests.

#![allow(dead_code)]

use kdesign::grid::{fft_to_centered, ComplexImage, C64};
use kdesign::kspace::{apply_noise, crop_kspace, unit_noise, AcquisitionBudget, AveragingPattern, MultiCoilKSpace};
use kdesign::phantom::{generate_phantom, generate_sensitivities, image_to_kspace, SensitivityMaps};
use kdesign::recon::EncodingModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Problem {
    pub maps: SensitivityMaps,
    pub n: usize,
    pub w: AveragingPattern,
    pub d: MultiCoilKSpace,
    pub truth: ComplexImage,
}

/// Random phantom, coil count, gridsize, nonuniform pattern and noise on a
/// 16×16 grid.
pub fn random_problem(seed: u64) -> Problem {
    let n0 = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coils = rng.gen_range(1..=4);
    let n = [8, 12, 16][rng.gen_range(0..3)];
    let truth = generate_phantom(n0, rng.gen_range(0..4), seed).unwrap();
    let maps = generate_sensitivities(coils, n0, seed ^ 0x55).unwrap();
    let budget = AcquisitionBudget::new(n0, 4, 0.02).unwrap();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let total: f64 = raw.iter().sum();
    let target = budget.effective_budget(n);
    let w = AveragingPattern::new(raw.iter().map(|v| v * target / total).collect(), &budget).unwrap();
    let full = image_to_kspace(&truth, &maps).unwrap();
    let clean = crop_kspace(&full, n).unwrap();
    let z = unit_noise(coils, n, seed);
    let d = apply_noise(&clean, &z, &w, budget.sigma()).unwrap();
    Problem { maps, n, w, d, truth }
}

/// Dense encoding matrix on the `n × n` block, rows ordered (coil, FFT-order
/// row, column), columns row-major voxels. Built from explicit exponentials.
pub fn dense_encoding(maps: &SensitivityMaps, n: usize) -> Vec<Vec<C64>> {
    let n0 = maps.n0();
    let mut rows = Vec::new();
    for l in 0..maps.coils() {
        let s = maps.coil(l);
        for r in 0..n {
            let m = fft_to_centered(r, n) as f64;
            for c in 0..n {
                let k = fft_to_centered(c, n) as f64;
                let mut row = vec![C64::new(0.0, 0.0); n0 * n0];
                for p in 0..n0 {
                    for q in 0..n0 {
                        let ph = -2.0 * std::f64::consts::PI * (m * p as f64 + k * q as f64) / n0 as f64;
                        row[p * n0 + q] = s[p * n0 + q] * C64::from_polar(1.0 / n0 as f64, ph);
                    }
                }
                rows.push(row);
            }
        }
    }
    rows
}

fn diffs(x: &[C64], n: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); 2 * n * n];
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            out[i] = x[r * n + (c + 1) % n] - x[i];
            out[n * n + i] = x[((r + 1) % n) * n + c] - x[i];
        }
    }
    out
}

fn diffs_adjoint(g: &[C64], n: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            out[i] += -g[i] - g[n * n + i];
            out[r * n + (c + 1) % n] += g[i];
            out[((r + 1) % n) * n + c] += g[n * n + i];
        }
    }
    out
}

/// `Σ w |E x − d|² + λ Σ |D x|` evaluated from scratch.
pub fn objective(x: &ComplexImage, p: &Problem, lambda: f64) -> f64 {
    let model = EncodingModel::new(&p.maps, p.n).unwrap();
    let ex = model.encode(x).unwrap();
    let n = p.n;
    let mut data = 0.0;
    for l in 0..p.d.coils() {
        for (i, (a, b)) in ex.coil(l).iter().zip(p.d.coil(l)).enumerate() {
            let line = (i / n + n / 2) % n;
            data += p.w.effective()[line] * (a - b).norm_sqr();
        }
    }
    data + lambda * diffs(x.data(), x.n()).iter().map(|v| v.norm()).sum::<f64>()
}

/// Primal-dual hybrid gradient on `min ‖A x − b‖² + λ‖D x‖₁` with
/// `A = √W E`, `b = √W d`, returning the iterate with the lowest objective.
pub fn pdhg(p: &Problem, lambda: f64, iterations: usize) -> (ComplexImage, f64) {
    let model = EncodingModel::new(&p.maps, p.n).unwrap();
    let n = p.n;
    let n0 = p.maps.n0();
    let sqrt_w: Vec<f64> = (0..n).map(|r| p.w.effective()[(r + n / 2) % n].sqrt()).collect();
    let weight = |y: &mut MultiCoilKSpace| {
        for l in 0..y.coils() {
            for (i, v) in y.coil_mut(l).iter_mut().enumerate() {
                *v *= sqrt_w[i / n];
            }
        }
    };
    let mut b = p.d.clone();
    weight(&mut b);
    let wmax = p.w.effective().iter().cloned().fold(0.0, f64::max);
    let step = 0.99 / (wmax + 8.0).sqrt();
    let (tau, sig) = (step, step);

    let mut x = ComplexImage::zeros(n0);
    let mut xbar = x.clone();
    let mut dual_a = MultiCoilKSpace::zeros(p.d.coils(), n);
    let mut dual_d = vec![C64::new(0.0, 0.0); 2 * n0 * n0];
    let mut best = (x.clone(), f64::INFINITY);
    for it in 0..iterations {
        let mut ax = model.encode(&xbar).unwrap();
        weight(&mut ax);
        for ((q, a), bb) in dual_a.data_mut().iter_mut().zip(ax.data()).zip(b.data()) {
            *q = (*q + (a - bb) * sig) / (1.0 + sig / 2.0);
        }
        for (q, g) in dual_d.iter_mut().zip(diffs(xbar.data(), n0)) {
            let v = *q + g * sig;
            let m = v.norm();
            *q = if m > lambda { v * (lambda / m) } else { v };
        }
        let mut wa = dual_a.clone();
        weight(&mut wa);
        let at = model.adjoint(&wa).unwrap();
        let dt = diffs_adjoint(&dual_d, n0);
        let prev = x.clone();
        for ((xi, a), d) in x.data_mut().iter_mut().zip(at.data()).zip(&dt) {
            *xi -= (a + d) * tau;
        }
        for ((xb, xi), pv) in xbar.data_mut().iter_mut().zip(x.data()).zip(prev.data()) {
            *xb = xi * 2.0 - pv;
        }
        if it % 50 == 0 || it + 1 == iterations {
            let f = objective(&x, p, lambda);
            if f < best.1 {
                best = (x.clone(), f);
            }
        }
    }
    best
}
