// SPDX-License-Identifier: Apache-2.0

//! Rough single-thread timing of the reconstruction kernels at desk scale.

use std::time::Instant;

use kdesign::kspace::{crop_kspace, simulate_noisy, uniform_pattern, AcquisitionBudget};
use kdesign::phantom::{generate_phantom, generate_sensitivities, image_to_kspace};
use kdesign::recon::{sense_tv_recon, zero_filled_recon, AdmmConfig, EncodingModel};

fn main() {
    let n0 = 64;
    let maps = generate_sensitivities(4, n0, 1).unwrap();
    let img = generate_phantom(n0, 6, 1).unwrap();
    let full = image_to_kspace(&img, &maps).unwrap();
    let budget = AcquisitionBudget::new(n0, 4, 0.05).unwrap();
    for n in [16, 32, 64] {
        let model = EncodingModel::new(&maps, n).unwrap();
        let w = uniform_pattern(n, &budget).unwrap();
        let d = simulate_noisy(&crop_kspace(&full, n).unwrap(), &w, 0.05, 3).unwrap();
        let t = Instant::now();
        for _ in 0..20 {
            zero_filled_recon(&d, &model).unwrap();
        }
        let zf = t.elapsed().as_secs_f64() / 20.0;
        let t = Instant::now();
        for _ in 0..3 {
            sense_tv_recon(&d, &w, 0.01, &model, &AdmmConfig::default()).unwrap();
        }
        let tv = t.elapsed().as_secs_f64() / 3.0;
        println!("N={n}: zero-filled {:.2} ms, sense-tv {:.1} ms", zf * 1e3, tv * 1e3);
    }
}
