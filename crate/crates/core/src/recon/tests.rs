// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::kspace::{crop_kspace, unit_noise, AcquisitionBudget};
use crate::phantom::{generate_phantom, generate_sensitivities, image_to_kspace, reference_image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    maps: SensitivityMaps,
    clean: MultiCoilKSpace,
    noise: MultiCoilKSpace,
    reference: ComplexImage,
    w: AveragingPattern,
    n: usize,
}

fn fixture(seed: u64, n: usize) -> Fixture {
    let n0 = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coils = rng.gen_range(1..=3);
    let maps = generate_sensitivities(coils, n0, seed).unwrap();
    let img = generate_phantom(n0, 3, seed).unwrap();
    let full = image_to_kspace(&img, &maps).unwrap();
    let clean = crop_kspace(&full, n).unwrap();
    let reference = reference_image(&full, &maps, n0).unwrap().pixels;
    let noise = unit_noise(coils, n, seed + 1);
    let budget = AcquisitionBudget::new(n0, 4, 0.05).unwrap();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let s: f64 = raw.iter().sum();
    let target = budget.effective_budget(n);
    let w = AveragingPattern::new(raw.iter().map(|v| v * target / s).collect(), &budget).unwrap();
    Fixture { maps, clean, noise, reference, w, n }
}

fn random_window(n: usize, seed: u64) -> ApodizationWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ApodizationWindow::new(n, (0..n * n).map(|_| rng.gen_range(0.2..1.5)).collect()).unwrap()
}

fn batch_loss(f: &Fixture, w: &AveragingPattern, params: &ReconParams, sigma: f64) -> f64 {
    let model = EncodingModel::new(&f.maps, f.n).unwrap();
    let s = TrainingSample { clean: &f.clean, noise: &f.noise, reference: &f.reference };
    let opts = GradientOptions { params: false, pattern: false, ..Default::default() };
    loss_and_gradients(&[s], w, sigma, params, &model, &opts).unwrap().loss
}

#[test]
fn window_gradient_matches_central_differences() {
    for seed in 0..4 {
        let f = fixture(seed, 12);
        let model = EncodingModel::new(&f.maps, f.n).unwrap();
        let window = random_window(f.n, seed);
        let params = ReconParams::Apodized { window: window.clone() };
        let s = TrainingSample { clean: &f.clean, noise: &f.noise, reference: &f.reference };
        let g = loss_and_gradients(&[s], &f.w, 0.05, &params, &model, &GradientOptions::default()).unwrap();
        let ParamGradient::Window { grad, diagonal: curvature, bound } = g.params else {
            panic!("expected window gradient")
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for _ in 0..6 {
            let k = rng.gen_range(0..f.n * f.n);
            let eps = 1e-4;
            let mut vp = window.values().to_vec();
            let mut vm = vp.clone();
            vp[k] += eps;
            vm[k] -= eps;
            let lp =
                batch_loss(&f, &f.w, &ReconParams::Apodized { window: ApodizationWindow::new(f.n, vp).unwrap() }, 0.05);
            let lm =
                batch_loss(&f, &f.w, &ReconParams::Apodized { window: ApodizationWindow::new(f.n, vm).unwrap() }, 0.05);
            let fd = (lp - lm) / (2.0 * eps);
            let curv = (lp - 2.0 * g.loss + lm) / (eps * eps);
            assert!((fd - grad[k]).abs() <= 1e-4 * fd.abs().max(1e-6), "grad {k}: fd {fd} vs {}", grad[k]);
            assert!((curv - curvature[k]).abs() <= 1e-3 * curv.abs() + 1e-6, "curv {k}: fd {curv} vs {}", curvature[k]);
            assert!(bound[k] >= curvature[k] * (1.0 - 1e-12));
        }
    }
}

#[test]
fn window_bound_dominates_hessian() {
    // the loss is quadratic in h, so L(h+v) + L(h−v) − 2L(h) = vᵀHv exactly
    for (seed, n) in [(0, 8), (1, 12), (2, 16), (5, 16)] {
        let f = fixture(seed, n);
        let model = EncodingModel::new(&f.maps, n).unwrap();
        let window = random_window(n, seed);
        let s = TrainingSample { clean: &f.clean, noise: &f.noise, reference: &f.reference };
        let params = ReconParams::Apodized { window: window.clone() };
        let g = loss_and_gradients(&[s], &f.w, 0.1, &params, &model, &GradientOptions::default()).unwrap();
        let ParamGradient::Window { bound, .. } = g.params else { panic!() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 40);
        for _ in 0..8 {
            let v: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-0.15..0.15)).collect();
            let shifted = |sign: f64| {
                let vals = window.values().iter().zip(&v).map(|(h, d)| h + sign * d).collect();
                batch_loss(&f, &f.w, &ReconParams::Apodized { window: ApodizationWindow::new(n, vals).unwrap() }, 0.1)
            };
            let quad = shifted(1.0) + shifted(-1.0) - 2.0 * g.loss;
            let majorant: f64 = v.iter().zip(&bound).map(|(d, b)| b * d * d).sum();
            assert!(quad <= majorant * (1.0 + 1e-9), "n {n}: vHv {quad} > {majorant}");
        }
    }
}

#[test]
fn pattern_gradient_matches_central_differences() {
    for seed in 0..3 {
        let f = fixture(seed, 8);
        let model = EncodingModel::new(&f.maps, f.n).unwrap();
        let params = ReconParams::Apodized { window: random_window(f.n, seed + 7) };
        let s = TrainingSample { clean: &f.clean, noise: &f.noise, reference: &f.reference };
        let g = loss_and_gradients(&[s], &f.w, 0.2, &params, &model, &GradientOptions::default()).unwrap();
        let gw = g.pattern.unwrap();
        for m in 0..f.n {
            let eps = 1e-5 * f.w.effective()[m];
            let mut vp = f.w.effective().to_vec();
            let mut vm = vp.clone();
            vp[m] += eps;
            vm[m] -= eps;
            let fd = (batch_loss(&f, &f.w.probe(vp), &params, 0.2) - batch_loss(&f, &f.w.probe(vm), &params, 0.2))
                / (2.0 * eps);
            assert!((fd - gw[m]).abs() <= 1e-4 * fd.abs().max(1e-6), "line {m}: fd {fd} vs {}", gw[m]);
        }
    }
}

#[test]
fn noiseless_full_resolution_is_stationary() {
    let f = fixture(3, 16);
    let model = EncodingModel::new(&f.maps, 16).unwrap();
    let params = ReconParams::Apodized { window: ApodizationWindow::ones(16) };
    let s = TrainingSample { clean: &f.clean, noise: &f.noise, reference: &f.reference };
    let g = loss_and_gradients(&[s], &f.w, 0.0, &params, &model, &GradientOptions::default()).unwrap();
    assert!(g.loss < 1e-24, "loss {}", g.loss);
    let ParamGradient::Window { grad, .. } = g.params else { panic!() };
    assert!(grad.iter().all(|v| v.abs() < 1e-12));
    assert!(g.pattern.unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn doubling_sigma_quadruples_noise_loss() {
    let f = fixture(5, 12);
    let zero = MultiCoilKSpace::zeros(f.clean.coils(), f.n);
    let zero_ref = ComplexImage::zeros(16);
    let model = EncodingModel::new(&f.maps, f.n).unwrap();
    let s = TrainingSample { clean: &zero, noise: &f.noise, reference: &zero_ref };
    let opts = GradientOptions { params: false, pattern: false, ..Default::default() };
    for params in [ReconParams::ZeroFilled, ReconParams::Apodized { window: random_window(f.n, 2) }] {
        let a = loss_and_gradients(&[s], &f.w, 0.1, &params, &model, &opts).unwrap().loss;
        let b = loss_and_gradients(&[s], &f.w, 0.2, &params, &model, &opts).unwrap().loss;
        assert!((b / a - 4.0).abs() < 1e-12, "{a} {b}");
    }
}

#[test]
fn batch_loss_is_mean_of_members() {
    let f1 = fixture(1, 8);
    let mut f2 = fixture(1, 8);
    f2.noise = unit_noise(f1.clean.coils(), 8, 99);
    let model = EncodingModel::new(&f1.maps, 8).unwrap();
    let opts = GradientOptions { params: false, pattern: false, ..Default::default() };
    let a = TrainingSample { clean: &f1.clean, noise: &f1.noise, reference: &f1.reference };
    let b = TrainingSample { clean: &f2.clean, noise: &f2.noise, reference: &f2.reference };
    let p = ReconParams::ZeroFilled;
    let la = loss_and_gradients(&[a], &f1.w, 0.1, &p, &model, &opts).unwrap().loss;
    let lb = loss_and_gradients(&[b], &f1.w, 0.1, &p, &model, &opts).unwrap().loss;
    let lab = loss_and_gradients(&[a, b], &f1.w, 0.1, &p, &model, &opts).unwrap().loss;
    assert!((lab - 0.5 * (la + lb)).abs() < 1e-12 * lab);
}

#[test]
fn sense_tv_estimates_are_deterministic_and_finite() {
    let f = fixture(2, 8);
    let model = EncodingModel::new(&f.maps, 8).unwrap();
    let s = TrainingSample { clean: &f.clean, noise: &f.noise, reference: &f.reference };
    let admm = AdmmConfig { iterations: 10, ..Default::default() };
    let opts = GradientOptions { admm, perturbation_seed: 4, ..Default::default() };
    let p = ReconParams::sense_tv(0.01).unwrap();
    let a = loss_and_gradients(&[s], &f.w, 0.05, &p, &model, &opts).unwrap();
    let b = loss_and_gradients(&[s], &f.w, 0.05, &p, &model, &opts).unwrap();
    assert_eq!(a, b);
    let ParamGradient::Lambda(gl) = a.params else { panic!() };
    assert!(gl.is_finite());
    let gw = a.pattern.unwrap();
    assert_eq!(gw.len(), 8);
    assert!(gw.iter().all(|v| v.is_finite()));
    // every component of one estimate shares |diff| / (2c)
    let mags: Vec<f64> = gw.iter().map(|v| v.abs()).collect();
    assert!(mags.iter().all(|m| (m - mags[0]).abs() <= 1e-9 * mags[0].max(1e-300)));
}

#[test]
fn spsa_average_tracks_finite_differences() {
    let f = fixture(6, 8);
    let model = EncodingModel::new(&f.maps, 8).unwrap();
    let s = TrainingSample { clean: &f.clean, noise: &f.noise, reference: &f.reference };
    let admm = AdmmConfig { iterations: 10, ..Default::default() };
    let p = ReconParams::sense_tv(0.01).unwrap();
    let sigma = 0.3;
    let draws = 200;
    let mut mean = vec![0.0; 8];
    for seed in 0..draws {
        let opts = GradientOptions { admm, params: false, perturbation_seed: seed, ..Default::default() };
        let g = loss_and_gradients(&[s, s], &f.w, sigma, &p, &model, &opts).unwrap().pattern.unwrap();
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v / draws as f64;
        }
    }
    let no = GradientOptions { admm, params: false, pattern: false, ..Default::default() };
    let fd: Vec<f64> = (0..8)
        .map(|m| {
            let eps = 1e-3 * f.w.effective()[m];
            let mut vp = f.w.effective().to_vec();
            let mut vm = vp.clone();
            vp[m] += eps;
            vm[m] -= eps;
            let l = |v: Vec<f64>| loss_and_gradients(&[s], &f.w.probe(v), sigma, &p, &model, &no).unwrap().loss;
            (l(vp) - l(vm)) / (2.0 * eps)
        })
        .collect();
    let dot: f64 = mean.iter().zip(&fd).map(|(a, b)| a * b).sum();
    let cos = dot / (mean.iter().map(|v| v * v).sum::<f64>() * fd.iter().map(|v| v * v).sum::<f64>()).sqrt();
    assert!(cos > 0.9, "cosine {cos}: {mean:?} vs {fd:?}");
}

#[test]
fn sense_tv_lambda_derivative_tracks_loss_curve() {
    let f = fixture(4, 12);
    let admm = AdmmConfig { iterations: 20, ..Default::default() };
    let model = EncodingModel::new(&f.maps, 12).unwrap();
    let s = TrainingSample { clean: &f.clean, noise: &f.noise, reference: &f.reference };
    let opts = GradientOptions { admm, pattern: false, ..Default::default() };
    let lam = 0.02;
    let g = loss_and_gradients(&[s], &f.w, 0.05, &ReconParams::sense_tv(lam).unwrap(), &model, &opts).unwrap();
    let ParamGradient::Lambda(gl) = g.params else { panic!() };
    let no = GradientOptions { params: false, ..opts };
    let l =
        |x: f64| loss_and_gradients(&[s], &f.w, 0.05, &ReconParams::sense_tv(x).unwrap(), &model, &no).unwrap().loss;
    let fd = (l(lam * 1.1) - l(lam * 0.9)) / (0.2 * lam);
    assert!((gl - fd).abs() <= 0.1 * fd.abs() + 1e-6, "{gl} vs {fd}");
}

#[test]
fn empty_batch_and_bad_sigma_rejected() {
    let f = fixture(0, 8);
    let model = EncodingModel::new(&f.maps, 8).unwrap();
    let opts = GradientOptions::default();
    assert!(loss_and_gradients(&[], &f.w, 0.1, &ReconParams::ZeroFilled, &model, &opts).is_err());
    let s = TrainingSample { clean: &f.clean, noise: &f.noise, reference: &f.reference };
    assert!(loss_and_gradients(&[s], &f.w, f64::NAN, &ReconParams::ZeroFilled, &model, &opts).is_err());
}

#[test]
fn method_names_roundtrip() {
    for m in [Method::ZeroFilled, Method::Apodized, Method::SenseTv] {
        assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
    }
    assert!("unet".parse::<Method>().is_err());
}

#[test]
fn window_centered_roundtrip() {
    let w = random_window(8, 1);
    let c = w.to_centered();
    assert_eq!(ApodizationWindow::from_centered(8, &c).unwrap(), w);
    assert!(ApodizationWindow::new(2, vec![1.0, 0.0, 1.0, 1.0]).is_err());
}
