// SPDX-License-Identifier: Apache-2.0

mod support;

use kdesign::grid::{inner, ComplexImage, C64};
use kdesign::kspace::{apply_noise, effective_from_actual, uniform_pattern, unit_noise, AcquisitionBudget};
use kdesign::kspace::{IntegerAveragingPattern, MultiCoilKSpace};
use kdesign::metrics::nrmse;
use kdesign::phantom::{generate_phantom, generate_sensitivities, image_to_kspace, SensitivityMaps};
use kdesign::recon::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracle;

fn rand_image(n: usize, seed: u64) -> ComplexImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ComplexImage::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn rand_kspace(coils: usize, n: usize, seed: u64) -> MultiCoilKSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..coils * n * n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    MultiCoilKSpace::from_vec(coils, n, data).unwrap()
}

#[test]
fn encoding_adjoint_identity() {
    for (coils, n) in [(1, 16), (3, 8), (4, 12)] {
        let maps = generate_sensitivities(coils, 16, 7).unwrap();
        let model = EncodingModel::new(&maps, n).unwrap();
        let x = rand_image(16, 1);
        let y = rand_kspace(coils, n, 2);
        let lhs = inner(model.encode(&x).unwrap().data(), y.data());
        let rhs = inner(x.data(), model.adjoint(&y).unwrap().data());
        assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0), "{lhs} {rhs}");
    }
}

#[test]
fn encoding_matches_dense_matrix() {
    let maps = generate_sensitivities(2, 16, 3).unwrap();
    let model = EncodingModel::new(&maps, 8).unwrap();
    let x = rand_image(16, 4);
    let fast = model.encode(&x).unwrap();
    let dense = oracle::dense_encoding(&maps, 8);
    for (row, got) in dense.iter().zip(fast.data()) {
        let want: C64 = row.iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((want - got).norm() < 1e-12);
    }
}

#[test]
fn noiseless_full_resolution_recovers_image() {
    let maps = generate_sensitivities(4, 32, 1).unwrap();
    let img = generate_phantom(32, 4, 2).unwrap();
    let model = EncodingModel::new(&maps, 32).unwrap();
    let d = image_to_kspace(&img, &maps).unwrap();
    let x = zero_filled_recon(&d, &model).unwrap();
    let err: f64 = x.data().iter().zip(img.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-10, "max error {err}");
}

#[test]
fn unit_window_equals_zero_filled() {
    let maps = generate_sensitivities(3, 16, 5).unwrap();
    let model = EncodingModel::new(&maps, 12).unwrap();
    let d = rand_kspace(3, 12, 6);
    let a = apodized_recon(&d, &ApodizationWindow::ones(12), &model).unwrap();
    let b = zero_filled_recon(&d, &model).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn linear_recons_are_linear(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let maps = generate_sensitivities(2, 16, seed).unwrap();
        let model = EncodingModel::new(&maps, 8).unwrap();
        let d1 = rand_kspace(2, 8, seed + 1);
        let d2 = rand_kspace(2, 8, seed + 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let window = ApodizationWindow::new(8, (0..64).map(|_| rng.gen_range(0.1..2.0)).collect()).unwrap();
        let mut combo = d1.clone();
        for ((c, a), b) in combo.data_mut().iter_mut().zip(d1.data()).zip(d2.data()) {
            *c = a * alpha + b * beta;
        }
        let zf = |d: &MultiCoilKSpace| zero_filled_recon(d, &model).unwrap();
        let ap = |d: &MultiCoilKSpace| apodized_recon(d, &window, &model).unwrap();
        let recons: [&dyn Fn(&MultiCoilKSpace) -> ComplexImage; 2] = [&zf, &ap];
        for f in recons {
            let lhs = f(&combo);
            let (x1, x2) = (f(&d1), f(&d2));
            let scale = lhs.norm_sqr().sqrt().max(1e-12);
            let err: f64 = lhs.data().iter().zip(x1.data()).zip(x2.data())
                .map(|((l, a), b)| (l - (a * alpha + b * beta)).norm_sqr()).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-10 * scale);
        }
    }
}

#[test]
fn apodized_noise_variance_scales_with_window_energy() {
    // single identity coil, uniform pattern: noise energy ratio is ‖h‖²/N²
    let n0 = 32;
    let maps = SensitivityMaps::identity(n0);
    let model = EncodingModel::new(&maps, n0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let window = ApodizationWindow::new(n0, (0..n0 * n0).map(|_| rng.gen_range(0.2..1.0)).collect()).unwrap();
    let energy: f64 = window.values().iter().map(|h| h * h).sum();
    let (mut num, mut den) = (0.0, 0.0);
    for trial in 0..20 {
        let z = unit_noise(1, n0, trial);
        num += apodized_recon(&z, &window, &model).unwrap().norm_sqr();
        den += zero_filled_recon(&z, &model).unwrap().norm_sqr();
    }
    let ratio = num / den;
    let expected = energy / (n0 * n0) as f64;
    assert!((ratio / expected - 1.0).abs() < 0.05, "{ratio} vs {expected}");
}

#[test]
fn lambda_zero_full_grid_matches_zero_filled() {
    let n0 = 16;
    let maps = SensitivityMaps::identity(n0);
    let model = EncodingModel::new(&maps, n0).unwrap();
    let budget = AcquisitionBudget::new(n0, 3, 0.1).unwrap();
    let w = uniform_pattern(n0, &budget).unwrap();
    let d = rand_kspace(1, n0, 9);
    let x = sense_tv_recon(&d, &w, 0.0, &model, &AdmmConfig::default()).unwrap().image;
    let z = zero_filled_recon(&d, &model).unwrap();
    let err: f64 = x.data().iter().zip(z.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn tiny_lambda_recovers_consistent_data() {
    let n0 = 32;
    let maps = generate_sensitivities(4, n0, 2).unwrap();
    let img = generate_phantom(n0, 4, 3).unwrap();
    let model = EncodingModel::new(&maps, n0).unwrap();
    let budget = AcquisitionBudget::new(n0, 2, 0.0).unwrap();
    let w = uniform_pattern(n0, &budget).unwrap();
    let d = image_to_kspace(&img, &maps).unwrap();
    let x = sense_tv_recon(&d, &w, 1e-6, &model, &AdmmConfig::default()).unwrap().image;
    let e = nrmse(&x, &img).unwrap();
    assert!(e <= 1e-3, "nrmse {e}");
}

#[test]
fn admm_matches_primal_dual_oracle() {
    for seed in 0..4u64 {
        let p = oracle::random_problem(seed);
        let model = EncodingModel::new(&p.maps, p.n).unwrap();
        for lambda in [1e-3, 1e-2, 1e-1] {
            let out = sense_tv_recon(&p.d, &p.w, lambda, &model, &AdmmConfig::default()).unwrap();
            let ours = oracle::objective(&out.image, &p, lambda);
            let (_, best) = oracle::pdhg(&p, lambda, 20_000);
            assert!((ours - out.status.objective).abs() <= 1e-9 * ours);
            let rel = (ours - best) / best;
            assert!(rel <= 5e-3, "seed {seed} lambda {lambda}: {ours} vs {best} ({rel})");
        }
    }
}

#[test]
fn primal_residual_decreases() {
    for seed in 0..6u64 {
        let p = oracle::random_problem(seed + 50);
        let model = EncodingModel::new(&p.maps, p.n).unwrap();
        let out = sense_tv_recon(&p.d, &p.w, 0.02, &model, &AdmmConfig::default()).unwrap();
        let r = &out.status.primal_residuals;
        assert_eq!(r.len(), 50);
        assert!(r[49] < r[4], "seed {seed}: {} !< {}", r[49], r[4]);
    }
}

#[test]
fn weight_scaling_is_consistent() {
    let p = oracle::random_problem(8);
    let model = EncodingModel::new(&p.maps, p.n).unwrap();
    let c = 2.5;
    let x = support::oracle::random_problem(9).truth;
    let budget = AcquisitionBudget::new(16, 10, 0.0).unwrap();
    let scaled: Vec<f64> = p.w.effective().iter().map(|v| v * c).collect();
    // 4 → 10 averages scales the budget by 2.5
    let wc = kdesign::AveragingPattern::new(scaled, &budget).unwrap();
    let f = sense_tv_objective(&x, &p.d, &p.w, 0.0, &model).unwrap();
    let fc = sense_tv_objective(&x, &p.d, &wc, 0.0, &model).unwrap();
    assert!((fc - c * f).abs() <= 1e-12 * fc);
    let a = sense_tv_recon(&p.d, &p.w, 0.01, &model, &AdmmConfig::default()).unwrap().image;
    let b = sense_tv_recon(&p.d, &wc, 0.01 * c, &model, &AdmmConfig::default()).unwrap().image;
    let diff: f64 = a.data().iter().zip(b.data()).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
    assert!(diff < 1e-8, "{diff}");
}

#[test]
fn zero_weight_lines_are_ignored() {
    let n0 = 16;
    let budget = AcquisitionBudget::new(n0, 2, 0.1).unwrap();
    let maps = generate_sensitivities(2, n0, 1).unwrap();
    let n = 8;
    let model = EncodingModel::new(&maps, n).unwrap();
    // 2·16 = 32 TRs over 8 lines, two edge lines skipped
    let q = IntegerAveragingPattern::new(vec![0, 4, 6, 6, 6, 6, 4, 0], &budget).unwrap();
    let w = effective_from_actual(&q, &budget);
    assert!(w.has_zero_lines());
    let img = generate_phantom(n0, 2, 4).unwrap();
    let clean = kdesign::kspace::crop_kspace(&image_to_kspace(&img, &maps).unwrap(), n).unwrap();
    let d = apply_noise(&clean, &unit_noise(2, n, 3), &w, 0.1).unwrap();
    let mut junk = d.clone();
    for l in 0..2 {
        // row 4 of an 8-line grid is line -4, the first skipped line
        for v in &mut junk.coil_mut(l)[4 * n..5 * n] {
            *v = C64::new(123.0, -7.0);
        }
    }
    for params in [
        ReconParams::ZeroFilled,
        ReconParams::Apodized { window: ApodizationWindow::ones(n) },
        ReconParams::sense_tv(0.01).unwrap(),
    ] {
        let a = reconstruct(&d, &w, &params, &model, &AdmmConfig::default()).unwrap();
        let b = reconstruct(&junk, &w, &params, &model, &AdmmConfig::default()).unwrap();
        assert_eq!(a, b, "{}", params.method());
    }
}

#[test]
fn normal_operator_matches_composition() {
    let budget = AcquisitionBudget::new(16, 4, 0.1).unwrap();
    for (coils, n) in [(1, 16), (3, 8), (4, 12)] {
        let maps = generate_sensitivities(coils, 16, 2).unwrap();
        let model = EncodingModel::new(&maps, n).unwrap();
        let p = oracle::random_problem(n as u64);
        let w = if p.n == n { p.w } else { uniform_pattern(n, &budget).unwrap() };
        let x = rand_image(16, 3);
        let mut y = model.encode(&x).unwrap();
        for l in 0..coils {
            for (i, v) in y.coil_mut(l).iter_mut().enumerate() {
                *v *= w.at_row(i / n);
            }
        }
        let want = model.adjoint(&y).unwrap();
        let mut got = vec![C64::new(0.0, 0.0); 256];
        model.normal_operator(&w).unwrap().apply(x.data(), &mut got);
        let err: f64 = want.data().iter().zip(&got).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }
}
