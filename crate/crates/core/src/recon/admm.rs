// SPDX-License-Identifier: Apache-2.0

//! SENSE-TV reconstruction
//!
//! ```text
//! min_x  ‖√w ⊙ (E x − d)‖₂² + λ ‖D x‖₁
//! ```
//!
//! solved by scaled-form ADMM on the split `z = D x`. The x-update solves
//! `(2 EᴴWE + ρ DᴴD) x = 2 EᴴW d + ρ Dᴴ(z − u)` by warm-started conjugate
//! gradients; the z-update is complex soft-thresholding at `λ/ρ`.

use super::{tv, EncodingModel};
use crate::error::{Error, Result};
use crate::grid::{ComplexImage, C64};
use crate::kspace::{AveragingPattern, MultiCoilKSpace};

/// ADMM penalty selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rho {
    /// `ρ = scale · λ`, falling back to 1 when `λ = 0`. The default scale is 10.
    ProportionalToLambda(f64),
    Fixed(f64),
}

impl Rho {
    pub fn value(&self, lambda: f64) -> f64 {
        match *self {
            Rho::ProportionalToLambda(s) => {
                if lambda > 0.0 {
                    s * lambda
                } else {
                    1.0
                }
            }
            Rho::Fixed(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmmConfig {
    pub iterations: usize,
    pub rho: Rho,
    pub cg_iterations: usize,
    pub cg_tolerance: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self { iterations: 50, rho: Rho::ProportionalToLambda(10.0), cg_iterations: 10, cg_tolerance: 1e-8 }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidParameter("ADMM needs at least one iteration".into()));
        }
        if self.cg_iterations < 1 {
            return Err(Error::InvalidParameter("CG needs at least one iteration".into()));
        }
        let ok = match self.rho {
            Rho::ProportionalToLambda(s) => s > 0.0 && s.is_finite(),
            Rho::Fixed(v) => v > 0.0 && v.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidParameter("ADMM penalty must be positive".into()));
        }
        if !(self.cg_tolerance >= 0.0) {
            return Err(Error::InvalidParameter("CG tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveStatus {
    /// x-updates whose CG solve hit the iteration cap before the tolerance.
    pub cg_unconverged: usize,
    /// `‖D x − z‖₂` after every ADMM iteration.
    pub primal_residuals: Vec<f64>,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct SenseTvOutput {
    pub image: ComplexImage,
    pub status: SolveStatus,
}

/// `‖√w ⊙ (E x − d)‖₂² + λ ‖D x‖₁`.
pub fn sense_tv_objective(
    x: &ComplexImage,
    d: &MultiCoilKSpace,
    w: &AveragingPattern,
    lambda: f64,
    model: &EncodingModel,
) -> Result<f64> {
    let ex = model.encode(x)?;
    model.check_data(d)?;
    let n = d.n();
    let mut data = 0.0;
    for l in 0..d.coils() {
        for (i, (a, b)) in ex.coil(l).iter().zip(d.coil(l)).enumerate() {
            data += w.at_row(i / n) * (a - b).norm_sqr();
        }
    }
    Ok(data + lambda * tv::l1(x.data(), x.n()))
}

fn dot_re(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Conjugate gradients for a Hermitian positive-definite operator, warm-started
/// from `x`. Returns whether the relative residual reached `tol`.
pub(crate) fn conjugate_gradient(
    mut apply: impl FnMut(&[C64], &mut [C64]),
    b: &[C64],
    x: &mut [C64],
    iterations: usize,
    tol: f64,
) -> bool {
    let len = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        return true;
    }
    let mut ap = vec![C64::new(0.0, 0.0); len];
    apply(x, &mut ap);
    let mut r: Vec<C64> = b.iter().zip(&ap).map(|(bb, a)| bb - a).collect();
    let mut p = r.clone();
    let mut rs = dot_re(&r, &r);
    if rs.sqrt() <= tol * bnorm {
        return true;
    }
    for _ in 0..iterations {
        apply(&p, &mut ap);
        let pap = dot_re(&p, &ap);
        if !(pap > 0.0) {
            return false;
        }
        let alpha = rs / pap;
        for ((xi, pi), (ri, ai)) in x.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap)) {
            *xi += pi * alpha;
            *ri -= ai * alpha;
        }
        let rs_new = dot_re(&r, &r);
        if rs_new.sqrt() <= tol * bnorm {
            return true;
        }
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + *pi * beta;
        }
        rs = rs_new;
    }
    false
}

fn soft_threshold(v: C64, t: f64) -> C64 {
    let m = v.norm();
    if m <= t {
        C64::new(0.0, 0.0)
    } else {
        v * ((m - t) / m)
    }
}

/// Runs `cfg.iterations` ADMM iterations from the zero-filled reconstruction of
/// the acquired (non-zero-weight) lines.
pub fn sense_tv_recon(
    d: &MultiCoilKSpace,
    w: &AveragingPattern,
    lambda: f64,
    model: &EncodingModel,
    cfg: &AdmmConfig,
) -> Result<SenseTvOutput> {
    cfg.validate()?;
    model.check_data(d)?;
    if w.n() != d.n() {
        return Err(Error::Shape(format!("pattern has {} lines, data has {}", w.n(), d.n())));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let n = d.n();
    let n0 = model.n0();
    let len = n0 * n0;
    let rho = cfg.rho.value(lambda);
    let thresh = lambda / rho;

    // W d, with unacquired lines contributing nothing
    let acquired = super::mask_unacquired(d, w)?;
    let mut wd = acquired.clone();
    for l in 0..d.coils() {
        for (r, row) in wd.coil_mut(l).chunks_mut(n).enumerate() {
            let wm = w.at_row(r);
            row.iter_mut().for_each(|v| *v *= wm);
        }
    }
    let mut rhs0 = model.adjoint(&wd)?.into_vec();
    rhs0.iter_mut().for_each(|v| *v *= 2.0);
    let mut normal = model.normal_operator(w)?;

    let mut x = super::zero_filled_recon(&acquired, model)?.into_vec();
    let mut dx = vec![C64::new(0.0, 0.0); 2 * len];
    tv::forward(&x, n0, &mut dx);
    let mut z = dx.clone();
    let mut u = vec![C64::new(0.0, 0.0); 2 * len];

    let mut rhs = vec![C64::new(0.0, 0.0); len];
    let mut zu = vec![C64::new(0.0, 0.0); 2 * len];
    let mut dtzu = vec![C64::new(0.0, 0.0); len];
    let mut nbuf = vec![C64::new(0.0, 0.0); len];
    let mut tbuf = vec![C64::new(0.0, 0.0); 2 * len];
    let mut gbuf = vec![C64::new(0.0, 0.0); len];
    let mut status =
        SolveStatus { cg_unconverged: 0, primal_residuals: Vec::with_capacity(cfg.iterations), objective: 0.0 };

    for it in 0..cfg.iterations {
        for ((o, zz), uu) in zu.iter_mut().zip(&z).zip(&u) {
            *o = zz - uu;
        }
        tv::adjoint(&zu, n0, &mut dtzu);
        for ((o, a), b) in rhs.iter_mut().zip(&rhs0).zip(&dtzu) {
            *o = a + b * rho;
        }
        let converged = conjugate_gradient(
            |v, out| {
                normal.apply(v, &mut nbuf);
                tv::gram(v, n0, &mut tbuf, &mut gbuf);
                for ((o, a), g) in out.iter_mut().zip(&nbuf).zip(&gbuf) {
                    *o = a * 2.0 + g * rho;
                }
            },
            &rhs,
            &mut x,
            cfg.cg_iterations,
            cfg.cg_tolerance,
        );
        if !converged {
            status.cg_unconverged += 1;
        }
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite ADMM iterate at iteration {it}")));
        }
        tv::forward(&x, n0, &mut dx);
        let mut res = 0.0;
        for ((zz, uu), g) in z.iter_mut().zip(u.iter_mut()).zip(&dx) {
            *zz = soft_threshold(g + *uu, thresh);
            let r = g - *zz;
            *uu += r;
            res += r.norm_sqr();
        }
        status.primal_residuals.push(res.sqrt());
    }
    if status.cg_unconverged > 0 {
        log::debug!("{} of {} CG solves stopped at the iteration cap", status.cg_unconverged, cfg.iterations);
    }
    let image = ComplexImage::from_vec(n0, x)?;
    status.objective = sense_tv_objective(&image, d, w, lambda, model)?;
    Ok(SenseTvOutput { image, status })
}
