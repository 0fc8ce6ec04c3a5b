// SPDX-License-Identifier: Apache-2.0

use std::time::Instant;

use kdesign::grid::{Fft2, C64};

fn main() {
    let f = Fft2::plan(64);
    let mut buf: Vec<C64> = (0..4096).map(|i| C64::new(i as f64, 1.0)).collect();
    let t = Instant::now();
    for _ in 0..10000 {
        f.forward(&mut buf);
    }
    println!("fft2 64: {:.1} us", t.elapsed().as_secs_f64() / 1e4 * 1e6);
}
