// SPDX-License-Identifier: Apache-2.0

//! Acquisition budget algebra, averaging patterns, multi-coil k-space and the
//! averaged-noise model.
//!
//! Averaging patterns are indexed by phase-encoding line in centered order:
//! entry `i` belongs to line `m = i - N/2`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{centered_to_fft, line_of_row, C64};
use crate::rng::{stream_rng, Stream};

/// Relative tolerance on the effective-average budget.
pub const BUDGET_RTOL: f64 = 1e-9;

/// The reference experiment: an `n0 × n0` acquisition with `w0` uniform
/// averages and per-sample noise standard deviation `sigma`. It fixes the total
/// scan time every candidate design must spend.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcquisitionBudget {
    n0: usize,
    w0: u32,
    sigma: f64,
}

impl AcquisitionBudget {
    pub fn new(n0: usize, w0: u32, sigma: f64) -> Result<Self> {
        if n0 < 2 || !n0.is_multiple_of(2) {
            return Err(Error::InvalidBudget(format!("n0 must be even and >= 2, got {n0}")));
        }
        if w0 < 1 {
            return Err(Error::InvalidBudget("w0 must be >= 1".into()));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidBudget(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { n0, w0, sigma })
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn w0(&self) -> u32 {
        self.w0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.n0, self.w0, sigma)
    }

    /// Total number of TRs, `w0 · n0`.
    pub fn total_trs(&self) -> u64 {
        self.w0 as u64 * self.n0 as u64
    }

    /// Required sum of effective averages at gridsize `n`: `w0 · n0² / n`.
    pub fn effective_budget(&self, n: usize) -> f64 {
        self.w0 as f64 * (self.n0 * self.n0) as f64 / n as f64
    }

    pub fn check_gridsize(&self, n: usize) -> Result<()> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGridsize { n, reason: "gridsize must be even and >= 2" });
        }
        if n > self.n0 {
            return Err(Error::InvalidGridsize { n, reason: "gridsize exceeds n0" });
        }
        Ok(())
    }
}

/// Continuous effective averages `w_m` for an `N`-line acquisition.
///
/// Constructed patterns satisfy `Σ w_m = w0·n0²/N` to [`BUDGET_RTOL`]. Patterns
/// built by [`effective_from_actual`] may contain zero-weight lines (lines that
/// were never acquired); all other constructors require `w_m > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AveragingPattern {
    n0: usize,
    effective: Vec<f64>,
}

impl AveragingPattern {
    pub fn new(effective: Vec<f64>, budget: &AcquisitionBudget) -> Result<Self> {
        budget.check_gridsize(effective.len())?;
        if let Some(v) = effective.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidPattern(format!("entries must be finite and > 0, found {v}")));
        }
        let p = Self { n0: budget.n0(), effective };
        p.check_budget(budget)?;
        Ok(p)
    }

    /// Same `n0`, new entries, no budget check. Used for finite-difference and
    /// simultaneous-perturbation probes that leave the budget surface.
    pub(crate) fn probe(&self, effective: Vec<f64>) -> Self {
        Self { n0: self.n0, effective }
    }

    fn check_budget(&self, budget: &AcquisitionBudget) -> Result<()> {
        let target = budget.effective_budget(self.n());
        let sum: f64 = self.effective.iter().sum();
        if (sum - target).abs() > BUDGET_RTOL * target {
            return Err(Error::InvalidPattern(format!("sum {sum} violates budget {target}")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.effective.len()
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn effective(&self) -> &[f64] {
        &self.effective
    }

    pub fn sum(&self) -> f64 {
        self.effective.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.n() as f64
    }

    /// Effective averages of the line stored at FFT-order row `row`.
    #[inline]
    pub fn at_row(&self, row: usize) -> f64 {
        self.effective[line_of_row(row, self.n())]
    }

    pub fn has_zero_lines(&self) -> bool {
        self.effective.contains(&0.0)
    }

    /// Implied TR count `(N/N0) Σ w_m`.
    pub fn scan_time(&self) -> f64 {
        self.n() as f64 / self.n0 as f64 * self.sum()
    }

    /// Continuous actual averages `q_m = (N/N0) w_m`.
    pub fn actual_from_effective(&self) -> Vec<f64> {
        let s = self.n() as f64 / self.n0 as f64;
        self.effective.iter().map(|w| w * s).collect()
    }

    /// Mean effective averages over the central quartile of lines (the `N/4`
    /// lines nearest DC) and over the outer quartile (`N/8` lines at each edge).
    pub fn quartile_means(&self) -> (f64, f64) {
        quartile_means(&self.effective)
    }
}

/// See [`AveragingPattern::quartile_means`].
pub fn quartile_means(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    let q = (n / 4).max(1);
    let start = (n - q) / 2;
    let central = &v[start..start + q];
    let edge = (q / 2).max(1);
    let outer: Vec<f64> = v[..edge].iter().chain(&v[n - edge..]).copied().collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(central), mean(&outer))
}

/// Integer averages `q_m` per phase-encoding line, summing to `w0 · n0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegerAveragingPattern {
    n0: usize,
    counts: Vec<u64>,
}

impl IntegerAveragingPattern {
    pub fn new(counts: Vec<u64>, budget: &AcquisitionBudget) -> Result<Self> {
        budget.check_gridsize(counts.len())?;
        let sum = counts
            .iter()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .ok_or_else(|| Error::InvalidPattern("integer averages overflow".into()))?;
        if sum != budget.total_trs() {
            return Err(Error::InvalidPattern(format!(
                "integer averages sum to {sum}, budget is {}",
                budget.total_trs()
            )));
        }
        Ok(Self { n0: budget.n0(), counts })
    }

    /// Baseline `n0`-line acquisition with `w0` averages on every line.
    pub fn baseline(budget: &AcquisitionBudget) -> Self {
        Self { n0: budget.n0(), counts: vec![budget.w0() as u64; budget.n0()] }
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn scan_time(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// `w_m(N) = w0 · n0² / N²` for every line.
pub fn uniform_pattern(n: usize, budget: &AcquisitionBudget) -> Result<AveragingPattern> {
    budget.check_gridsize(n)?;
    let v = budget.w0() as f64 * (budget.n0() * budget.n0()) as f64 / (n * n) as f64;
    AveragingPattern::new(vec![v; n], budget)
}

/// Converts actual averages to effective averages, `w_m = q_m · n0 / N`.
/// Lines with `q_m = 0` become zero-weight (unacquired) lines.
pub fn effective_from_actual(q: &IntegerAveragingPattern, budget: &AcquisitionBudget) -> AveragingPattern {
    let s = budget.n0() as f64 / q.n() as f64;
    AveragingPattern { n0: budget.n0(), effective: q.counts().iter().map(|&c| c as f64 * s).collect() }
}

/// `L` coils of complex samples on an `N × N` Cartesian grid, FFT order.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiCoilKSpace {
    coils: usize,
    n: usize,
    data: Vec<C64>,
}

impl MultiCoilKSpace {
    pub fn zeros(coils: usize, n: usize) -> Self {
        Self { coils, n, data: vec![C64::new(0.0, 0.0); coils * n * n] }
    }

    pub fn from_vec(coils: usize, n: usize, data: Vec<C64>) -> Result<Self> {
        if coils == 0 || n == 0 {
            return Err(Error::Shape("coils and gridsize must be positive".into()));
        }
        if data.len() != coils * n * n {
            return Err(Error::Shape(format!("expected {} samples, got {}", coils * n * n, data.len())));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Shape("k-space samples must be finite".into()));
        }
        Ok(Self { coils, n, data })
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn coil(&self, l: usize) -> &[C64] {
        let s = self.n * self.n;
        &self.data[l * s..(l + 1) * s]
    }

    pub fn coil_mut(&mut self, l: usize) -> &mut [C64] {
        let s = self.n * self.n;
        &mut self.data[l * s..(l + 1) * s]
    }

    /// Sample at centered indices `(m, k)` (phase encode, readout).
    pub fn at_centered(&self, l: usize, m: isize, k: isize) -> C64 {
        let n = self.n;
        self.coil(l)[centered_to_fft(m, n) * n + centered_to_fft(k, n)]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

fn crop_indices(n_big: usize, n_small: usize) -> impl Iterator<Item = (usize, usize)> {
    let h = (n_small / 2) as isize;
    (-h..h).map(move |m| (centered_to_fft(m, n_big), centered_to_fft(m, n_small)))
}

/// Keeps the central `n × n` block of every coil, symmetric about DC.
pub fn crop_kspace(full: &MultiCoilKSpace, n: usize) -> Result<MultiCoilKSpace> {
    if n < 2 || !n.is_multiple_of(2) || !full.n().is_multiple_of(2) {
        return Err(Error::InvalidGridsize { n, reason: "gridsizes must be even and >= 2" });
    }
    if n > full.n() {
        return Err(Error::InvalidGridsize { n, reason: "crop larger than source grid" });
    }
    let big = full.n();
    let mut out = MultiCoilKSpace::zeros(full.coils(), n);
    for l in 0..full.coils() {
        let src = full.coil(l);
        let dst = out.coil_mut(l);
        for (rb, rs) in crop_indices(big, n) {
            for (cb, cs) in crop_indices(big, n) {
                dst[rs * n + cs] = src[rb * big + cb];
            }
        }
    }
    Ok(out)
}

/// Embeds an `N × N` grid in the centre of an `n0 × n0` grid of zeros.
pub fn zero_pad_kspace(small: &MultiCoilKSpace, n0: usize) -> Result<MultiCoilKSpace> {
    let n = small.n();
    if n > n0 || !n0.is_multiple_of(2) || !n.is_multiple_of(2) {
        return Err(Error::InvalidGridsize { n, reason: "cannot zero-pad to a smaller or odd grid" });
    }
    let mut out = MultiCoilKSpace::zeros(small.coils(), n0);
    for l in 0..small.coils() {
        let src = small.coil(l);
        let dst = out.coil_mut(l);
        for (rb, rs) in crop_indices(n0, n) {
            for (cb, cs) in crop_indices(n0, n) {
                dst[rb * n0 + cb] = src[rs * n + cs];
            }
        }
    }
    Ok(out)
}

/// Unit-variance circular complex Gaussian noise (variance 1/2 per component).
pub fn unit_noise(coils: usize, n: usize, seed: u64) -> MultiCoilKSpace {
    let mut rng = stream_rng(seed, Stream::Simulation, &[coils as u64, n as u64]);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let data = (0..coils * n * n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re * s, im * s)
        })
        .collect();
    MultiCoilKSpace { coils, n, data }
}

/// `d = s + σ / √w ⊙ z` for a fixed unit-variance noise realisation `z`.
/// Zero-weight lines are treated as unacquired and set to zero.
pub fn apply_noise(
    clean: &MultiCoilKSpace,
    unit: &MultiCoilKSpace,
    w: &AveragingPattern,
    sigma: f64,
) -> Result<MultiCoilKSpace> {
    let n = clean.n();
    if unit.n() != n || unit.coils() != clean.coils() {
        return Err(Error::Shape("noise realisation does not match data".into()));
    }
    if w.n() != n {
        return Err(Error::Shape(format!("pattern has {} lines, data has {n}", w.n())));
    }
    let mut out = clean.clone();
    for l in 0..clean.coils() {
        let z = unit.coil(l);
        let d = out.coil_mut(l);
        for r in 0..n {
            let wm = w.at_row(r);
            let row = &mut d[r * n..(r + 1) * n];
            if wm == 0.0 {
                row.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
                continue;
            }
            let s = sigma / wm.sqrt();
            for (v, zz) in row.iter_mut().zip(&z[r * n..(r + 1) * n]) {
                *v += zz * s;
            }
        }
    }
    Ok(out)
}

/// Draws averaged noisy data `d = s + (1/√w) ⊙ z`, `z ~ CN(0, σ²)` i.i.d.
pub fn simulate_noisy(clean: &MultiCoilKSpace, w: &AveragingPattern, sigma: f64, seed: u64) -> Result<MultiCoilKSpace> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let unit = unit_noise(clean.coils(), clean.n(), seed);
    apply_noise(clean, &unit, w, sigma)
}
