// SPDX-License-Identifier: Apache-2.0

//! Anisotropic first-order finite differences with periodic boundaries.
//!
//! `D x` stacks the horizontal differences (first `n²` entries) on top of the
//! vertical ones (last `n²`).

use crate::grid::C64;

pub fn forward(x: &[C64], n: usize, out: &mut [C64]) {
    debug_assert_eq!(x.len(), n * n);
    debug_assert_eq!(out.len(), 2 * n * n);
    let (h, v) = out.split_at_mut(n * n);
    for r in 0..n {
        let rn = (r + 1) % n;
        for c in 0..n {
            let cn = (c + 1) % n;
            let xi = x[r * n + c];
            h[r * n + c] = x[r * n + cn] - xi;
            v[r * n + c] = x[rn * n + c] - xi;
        }
    }
}

pub fn adjoint(g: &[C64], n: usize, out: &mut [C64]) {
    debug_assert_eq!(g.len(), 2 * n * n);
    debug_assert_eq!(out.len(), n * n);
    let (h, v) = g.split_at(n * n);
    for r in 0..n {
        let rp = (r + n - 1) % n;
        for c in 0..n {
            let cp = (c + n - 1) % n;
            out[r * n + c] = h[r * n + cp] - h[r * n + c] + v[rp * n + c] - v[r * n + c];
        }
    }
}

/// `‖D x‖₁` with the complex modulus.
pub fn l1(x: &[C64], n: usize) -> f64 {
    let mut buf = vec![C64::new(0.0, 0.0); 2 * n * n];
    forward(x, n, &mut buf);
    buf.iter().map(|v| v.norm()).sum()
}

/// `Dᴴ D x`.
pub fn gram(x: &[C64], n: usize, tmp: &mut [C64], out: &mut [C64]) {
    forward(x, n, tmp);
    adjoint(tmp, n, out);
}
