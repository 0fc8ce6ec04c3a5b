// SPDX-License-Identifier: Apache-2.0

//! Synthetic ground truth: phantoms, coil sensitivities, noiseless multi-coil
//! k-space, reference images, and noise-level calibration.

mod io;

pub use io::{
    decode_dataset, encode_dataset, load_dataset, manifest_path, parse_manifest, render_manifest, save_dataset,
    DATASET_MAGIC, DATASET_VERSION,
};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{ComplexImage, Fft2, C64};
use crate::kspace::{crop_kspace, zero_pad_kspace, AcquisitionBudget, MultiCoilKSpace};
use crate::rng::{stream_rng, Stream};

/// Complex coil sensitivities on the `n0 × n0` image grid, coil-major.
///
/// Maps are scaled so that the largest voxel root-sum-of-squares is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMaps {
    coils: usize,
    n0: usize,
    values: Vec<C64>,
    rss2: Vec<f64>,
}

impl SensitivityMaps {
    /// Validates already-normalised maps.
    pub fn new(coils: usize, n0: usize, values: Vec<C64>) -> Result<Self> {
        if coils == 0 || n0 == 0 || values.len() != coils * n0 * n0 {
            return Err(Error::Shape(format!("sensitivity maps need {coils}x{n0}x{n0} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidParameter("sensitivity maps must be finite".into()));
        }
        let rss2 = rss2(coils, n0, &values);
        let max = rss2.iter().cloned().fold(0.0, f64::max).sqrt();
        if (max - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("max root-sum-of-squares is {max}, expected 1")));
        }
        Ok(Self { coils, n0, values, rss2 })
    }

    /// Rescales arbitrary maps so the max root-sum-of-squares is 1.
    pub fn normalized(coils: usize, n0: usize, mut values: Vec<C64>) -> Result<Self> {
        if values.len() != coils * n0 * n0 || coils == 0 {
            return Err(Error::Shape("sensitivity map size mismatch".into()));
        }
        let max = rss2(coils, n0, &values).iter().cloned().fold(0.0, f64::max).sqrt();
        if !(max > 0.0) || !max.is_finite() {
            return Err(Error::DegenerateInput("sensitivity maps are identically zero".into()));
        }
        values.iter_mut().for_each(|v| *v /= max);
        Self::new(coils, n0, values)
    }

    /// Single coil with unit sensitivity everywhere.
    pub fn identity(n0: usize) -> Self {
        Self::new(1, n0, vec![C64::new(1.0, 0.0); n0 * n0]).expect("identity maps are valid")
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn coil(&self, l: usize) -> &[C64] {
        let s = self.n0 * self.n0;
        &self.values[l * s..(l + 1) * s]
    }

    /// `Σ_ℓ |S_ℓ|²` per voxel.
    pub fn sum_of_squares(&self) -> &[f64] {
        &self.rss2
    }

    /// SENSE combination `x = Σ_ℓ conj(S_ℓ) f_ℓ / Σ_ℓ |S_ℓ|²`, zero where the
    /// coils have no sensitivity. `coil_images` is coil-major.
    pub fn combine(&self, coil_images: &[C64]) -> ComplexImage {
        let s = self.n0 * self.n0;
        assert_eq!(coil_images.len(), self.coils * s, "coil image stack has wrong size");
        let mut out = vec![C64::new(0.0, 0.0); s];
        for l in 0..self.coils {
            let f = &coil_images[l * s..(l + 1) * s];
            for ((o, sv), fv) in out.iter_mut().zip(self.coil(l)).zip(f) {
                *o += sv.conj() * fv;
            }
        }
        for (o, &r) in out.iter_mut().zip(&self.rss2) {
            *o = if r > 0.0 { *o / r } else { C64::new(0.0, 0.0) };
        }
        ComplexImage::from_vec(self.n0, out).expect("combine output size")
    }

    /// Adjoint of [`combine`](Self::combine): `e ↦ (S_ℓ e / Σ|S|²)_ℓ`.
    pub fn combine_adjoint(&self, img: &ComplexImage) -> Vec<C64> {
        let s = self.n0 * self.n0;
        let mut out = vec![C64::new(0.0, 0.0); self.coils * s];
        for l in 0..self.coils {
            let dst = &mut out[l * s..(l + 1) * s];
            for (((o, sv), e), &r) in dst.iter_mut().zip(self.coil(l)).zip(img.data()).zip(&self.rss2) {
                *o = if r > 0.0 { sv * e / r } else { C64::new(0.0, 0.0) };
            }
        }
        out
    }

    /// Gram matrix `G[ℓ][ℓ'] = Σ_voxels conj(c_ℓ) c_ℓ'` of the combination
    /// weights `c_ℓ = conj(S_ℓ) / Σ|S|²`, row-major `L × L`.
    pub fn combine_gram(&self) -> Vec<C64> {
        let l = self.coils;
        let mut g = vec![C64::new(0.0, 0.0); l * l];
        for a in 0..l {
            for b in 0..l {
                let mut acc = C64::new(0.0, 0.0);
                for ((sa, sb), &r) in self.coil(a).iter().zip(self.coil(b)).zip(&self.rss2) {
                    if r > 0.0 {
                        // conj(c_a) c_b = S_a conj(S_b) / r²
                        acc += sa * sb.conj() / (r * r);
                    }
                }
                g[a * l + b] = acc;
            }
        }
        g
    }
}

fn rss2(coils: usize, n0: usize, values: &[C64]) -> Vec<f64> {
    let s = n0 * n0;
    let mut out = vec![0.0; s];
    for l in 0..coils {
        for (o, v) in out.iter_mut().zip(&values[l * s..(l + 1) * s]) {
            *o += v.norm_sqr();
        }
    }
    out
}

/// Normalised image-plane coordinate of pixel index `i` on an `n`-grid,
/// in `(-1, 1)` with the object centred between the two middle pixels.
#[inline]
fn coord(i: usize, n: usize) -> f64 {
    (i as f64 - n as f64 / 2.0 + 0.5) / (n as f64 / 2.0)
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Semi-axes of the single ellipse drawn when `complexity == 0`.
pub const BASE_ELLIPSE_AXES: (f64, f64) = (0.7, 0.85);

/// Generates a piecewise-smooth complex phantom with magnitude in `[0, 1]`.
///
/// `complexity` is the number of random interior ellipses; `complexity / 2 + 1`
/// thin curvilinear high-contrast features are added on top. With
/// `complexity == 0` the magnitude is a single centred ellipse of value 1 with
/// semi-axes [`BASE_ELLIPSE_AXES`] (horizontal, vertical). Every phantom carries a
/// smooth quadratic phase bounded by π/4.
pub fn generate_phantom(width: usize, complexity: usize, seed: u64) -> Result<ComplexImage> {
    if width < 16 || !width.is_multiple_of(2) {
        return Err(Error::InvalidSize(format!("phantom width must be even and >= 16, got {width}")));
    }
    let mut rng = stream_rng(seed, Stream::Phantom, &[width as u64, complexity as u64]);
    let n = width;
    let mut mag = vec![0.0f64; n * n];

    let paint = |mag: &mut [f64], e: &Ellipse| {
        for r in 0..n {
            for c in 0..n {
                if e.contains(coord(c, n), coord(r, n)) {
                    mag[r * n + c] = e.value;
                }
            }
        }
    };

    let (a0, b0) = BASE_ELLIPSE_AXES;
    if complexity == 0 {
        paint(&mut mag, &Ellipse { cx: 0.0, cy: 0.0, a: a0, b: b0, angle: 0.0, value: 1.0 });
    } else {
        paint(&mut mag, &Ellipse { cx: 0.0, cy: 0.0, a: a0 + 0.06, b: b0 + 0.06, angle: 0.0, value: 0.9 });
        paint(&mut mag, &Ellipse { cx: 0.0, cy: 0.0, a: a0, b: b0, angle: 0.0, value: 0.35 });
        for _ in 0..complexity {
            let rad = rng.gen_range(0.0..0.45);
            let th = rng.gen_range(0.0..2.0 * PI);
            let e = Ellipse {
                cx: rad * th.cos() * a0 / b0,
                cy: rad * th.sin(),
                a: rng.gen_range(0.05..0.25),
                b: rng.gen_range(0.05..0.25),
                angle: rng.gen_range(0.0..PI),
                value: rng.gen_range(0.1..0.8),
            };
            paint(&mut mag, &e);
        }
        let vessels = complexity / 2 + 1;
        for _ in 0..vessels {
            draw_curve(&mut mag, n, &mut rng, a0, b0);
        }
    }

    let coeffs: [f64; 5] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let phase_at =
        |x: f64, y: f64| coeffs[0] * x + coeffs[1] * y + coeffs[2] * x * y + coeffs[3] * x * x + coeffs[4] * y * y;
    let mut pmax: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            pmax = pmax.max(phase_at(coord(c, n), coord(r, n)).abs());
        }
    }
    let pscale = if pmax > 0.0 { rng.gen_range(0.5..1.0) * (PI / 4.0) / pmax } else { 0.0 };

    Ok(ComplexImage::from_fn(n, |r, c| {
        let m = mag[r * n + c].clamp(0.0, 1.0);
        C64::from_polar(m, pscale * phase_at(coord(c, n), coord(r, n)))
    }))
}

/// Thin quadratic Bézier curve with a sub-pixel Gaussian cross-section.
fn draw_curve(mag: &mut [f64], n: usize, rng: &mut impl Rng, a0: f64, b0: f64) {
    let mut pt = || {
        let rad = rng.gen_range(0.0..0.8);
        let th = rng.gen_range(0.0..2.0 * PI);
        (rad * a0 * th.cos(), rad * b0 * th.sin())
    };
    let (p0, p1, p2) = (pt(), pt(), pt());
    let value = rng.gen_range(0.85..1.0);
    let half = n as f64 / 2.0;
    let to_px = |v: f64| v * half + half - 0.5;
    let steps = 8 * n;
    let width = 0.6;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let u = 1.0 - t;
        let x = to_px(u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0);
        let y = to_px(u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1);
        let (xi, yi) = (x.round() as isize, y.round() as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (px, py) = (xi + dx, yi + dy);
                if px < 0 || py < 0 || px >= n as isize || py >= n as isize {
                    continue;
                }
                let d2 = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
                let v = value * (-d2 / (2.0 * width * width)).exp();
                let idx = py as usize * n + px as usize;
                if v > mag[idx] {
                    mag[idx] = v;
                }
            }
        }
    }
}

/// Gaussian-lobe coil sensitivities: one lobe per coil placed just outside the
/// field of view at evenly spaced (jittered) angles, each with a gentle linear
/// phase. A single coil gets a constant unit map.
pub fn generate_sensitivities(coils: usize, n0: usize, seed: u64) -> Result<SensitivityMaps> {
    if coils == 0 {
        return Err(Error::InvalidParameter("at least one coil is required".into()));
    }
    if n0 == 0 {
        return Err(Error::InvalidSize("map size must be positive".into()));
    }
    if coils == 1 {
        return Ok(SensitivityMaps::identity(n0));
    }
    let mut rng = stream_rng(seed, Stream::Sensitivity, &[coils as u64, n0 as u64]);
    let lobe_width: f64 = 0.9;
    let radius = 1.1;
    let mut values = Vec::with_capacity(coils * n0 * n0);
    for l in 0..coils {
        let angle = 2.0 * PI * l as f64 / coils as f64 + rng.gen_range(-0.2..0.2);
        let (cx, cy) = (radius * angle.cos(), radius * angle.sin());
        let offset = rng.gen_range(-PI..PI);
        let slope = rng.gen_range(-0.5..0.5);
        for r in 0..n0 {
            for c in 0..n0 {
                let (x, y) = (coord(c, n0), coord(r, n0));
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let m = (-d2 / (2.0 * lobe_width * lobe_width)).exp();
                let ph = offset + slope * (x * angle.cos() + y * angle.sin());
                values.push(C64::from_polar(m, ph));
            }
        }
    }
    SensitivityMaps::normalized(coils, n0, values)
}

/// Noiseless multi-coil k-space `s_ℓ = F(S_ℓ ⊙ x)` with a unitary DFT.
pub fn image_to_kspace(image: &ComplexImage, maps: &SensitivityMaps) -> Result<MultiCoilKSpace> {
    let n = image.n();
    if n != maps.n0() {
        return Err(Error::Shape(format!("image is {n}x{n}, maps are {}x{}", maps.n0(), maps.n0())));
    }
    let fft = Fft2::plan(n);
    let mut out = MultiCoilKSpace::zeros(maps.coils(), n);
    for l in 0..maps.coils() {
        let dst = out.coil_mut(l);
        for ((d, s), x) in dst.iter_mut().zip(maps.coil(l)).zip(image.data()) {
            *d = s * x;
        }
        fft.forward(dst);
    }
    Ok(out)
}

/// Per-coil unitary inverse DFT of k-space after zero-padding to `n0`.
pub fn coil_images(kspace: &MultiCoilKSpace, n0: usize) -> Result<Vec<C64>> {
    let padded = if kspace.n() == n0 { kspace.clone() } else { zero_pad_kspace(kspace, n0)? };
    let fft = Fft2::plan(n0);
    let mut data = padded.data().to_vec();
    for chunk in data.chunks_mut(n0 * n0) {
        fft.inverse(chunk);
    }
    Ok(data)
}

/// A noise-free image on the `n0 × n0` grid built from `source_n × source_n`
/// k-space.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceImage {
    pub pixels: ComplexImage,
    pub source_n: usize,
}

impl ReferenceImage {
    pub fn n0(&self) -> usize {
        self.pixels.n()
    }
}

/// Zero-pad → inverse DFT per coil → SENSE combination.
pub fn reference_image(clean: &MultiCoilKSpace, maps: &SensitivityMaps, n0: usize) -> Result<ReferenceImage> {
    if clean.n() > n0 {
        return Err(Error::InvalidGridsize { n: clean.n(), reason: "reference source exceeds n0" });
    }
    if maps.n0() != n0 || maps.coils() != clean.coils() {
        return Err(Error::Shape("maps do not match k-space".into()));
    }
    let imgs = coil_images(clean, n0)?;
    Ok(ReferenceImage { pixels: maps.combine(&imgs), source_n: clean.n() })
}

fn max_coil_magnitude(kspace: &MultiCoilKSpace) -> f64 {
    let imgs = coil_images(kspace, kspace.n()).expect("same-size padding");
    imgs.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Scales a slice so the largest voxel magnitude over all coil images is 1.
pub fn normalize_slice(kspace: &MultiCoilKSpace) -> Result<MultiCoilKSpace> {
    let max = max_coil_magnitude(kspace);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::DegenerateInput("cannot normalise an all-zero slice".into()));
    }
    let mut out = kspace.clone();
    out.scale(1.0 / max);
    Ok(out)
}

/// Central disk of radius `n0 / 8` voxels.
pub fn central_mask(n0: usize) -> Vec<bool> {
    let r = n0 as f64 / 8.0;
    let c = n0 as f64 / 2.0 - 0.5;
    let mut m = Vec::with_capacity(n0 * n0);
    for y in 0..n0 {
        for x in 0..n0 {
            m.push((y as f64 - c).powi(2) + (x as f64 - c).powi(2) <= r * r);
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// A set of `T` normalised noise-free slices at `n0` sharing one set of maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kspace: Vec<MultiCoilKSpace>,
    pub maps: SensitivityMaps,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(kspace: Vec<MultiCoilKSpace>, maps: SensitivityMaps, splits: Vec<Split>) -> Result<Self> {
        if kspace.len() != splits.len() {
            return Err(Error::Shape(format!("{} slices but {} split tags", kspace.len(), splits.len())));
        }
        for (i, s) in kspace.iter().enumerate() {
            if s.n() != maps.n0() || s.coils() != maps.coils() {
                return Err(Error::Shape(format!("slice {i} does not match the sensitivity maps")));
            }
        }
        Ok(Self { kspace, maps, splits })
    }

    pub fn n0(&self) -> usize {
        self.maps.n0()
    }

    pub fn coils(&self) -> usize {
        self.maps.coils()
    }

    pub fn len(&self) -> usize {
        self.kspace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kspace.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits.iter().enumerate().filter(|(_, s)| **s == split).map(|(i, _)| i).collect()
    }

    /// Largest deviation of any slice's max coil-image magnitude from 1.
    pub fn normalization_error(&self) -> f64 {
        self.kspace.iter().map(|s| (max_coil_magnitude(s) - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n0: usize,
    pub coils: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub complexity: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { n0: 64, coils: 4, train: 32, validation: 8, test: 8, complexity: 6, seed: 0 }
    }
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let total = spec.train + spec.validation + spec.test;
    if total == 0 {
        return Err(Error::InvalidSize("dataset must contain at least one slice".into()));
    }
    let maps = generate_sensitivities(spec.coils, spec.n0, spec.seed)?;
    let mut kspace = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    for i in 0..total {
        let slice_seed = crate::rng::derive_seed(spec.seed, Stream::Phantom, &[i as u64]);
        let img = generate_phantom(spec.n0, spec.complexity, slice_seed)?;
        kspace.push(normalize_slice(&image_to_kspace(&img, &maps)?)?);
        splits.push(if i < spec.train {
            Split::Train
        } else if i < spec.train + spec.validation {
            Split::Validation
        } else {
            Split::Test
        });
    }
    Dataset::new(kspace, maps, splits)
}

/// Noise standard deviation `σ` giving `target_snr` in the baseline zero-filled
/// reconstruction (`n0` lines, `w0` averages on each).
///
/// SNR is the mean full-resolution reference magnitude over [`central_mask`]
/// (averaged over every slice) divided by the RMS noise standard deviation over
/// the same mask. The noise level follows analytically from the unitary DFT and
/// SENSE combination: per-voxel variance `σ² / (w0 Σ_ℓ |S_ℓ|²)`.
pub fn calibrate_sigma(dataset: &Dataset, budget: &AcquisitionBudget, target_snr: f64) -> Result<f64> {
    if !(target_snr > 0.0) {
        return Err(Error::InvalidParameter(format!("target SNR must be > 0, got {target_snr}")));
    }
    if target_snr.is_infinite() {
        return Ok(0.0);
    }
    let n0 = dataset.n0();
    let mask = central_mask(n0);
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::DegenerateInput("calibration mask is empty".into()));
    }
    if dataset.is_empty() {
        return Err(Error::DegenerateInput("dataset has no slices".into()));
    }
    let mut signal = 0.0;
    for s in &dataset.kspace {
        let r = reference_image(s, &dataset.maps, n0)?;
        signal += r.pixels.data().iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| v.norm()).sum::<f64>();
    }
    signal /= (count * dataset.len()) as f64;
    let ss = dataset.maps.sum_of_squares();
    let inv_mean = ss.iter().zip(&mask).filter(|(_, m)| **m).map(|(s, _)| 1.0 / s).sum::<f64>() / count as f64;
    Ok(signal * (budget.w0() as f64).sqrt() / (target_snr * inv_mean.sqrt()))
}

/// Crop to `n` and build the corresponding reference, the two views of one
/// slice that training at gridsize `n` needs.
pub fn lowres_pair(
    slice: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    n: usize,
) -> Result<(MultiCoilKSpace, ReferenceImage)> {
    let cropped = crop_kspace(slice, n)?;
    let r = reference_image(&cropped, maps, slice.n())?;
    Ok((cropped, r))
}
