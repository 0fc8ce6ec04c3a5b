// SPDX-License-Identifier: Apache-2.0

//! Output files: CSV tables, 16-bit graymaps, dataset hashing and atomic
//! writes.

use std::fmt::Write as _;
use std::path::Path;

use kdesign::design::DesignResult;
use kdesign::grid::ComplexImage;
use kdesign::phantom::manifest_path;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// SHA-256 over the dataset payload followed by its manifest.
pub fn dataset_sha256(path: &Path) -> CliResult<String> {
    let mut h = Sha256::new();
    h.update(std::fs::read(path).map_err(CliError::io(path))?);
    let manifest = manifest_path(path);
    h.update(std::fs::read(&manifest).map_err(CliError::io(&manifest))?);
    Ok(hex::encode(h.finalize()))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(CliError::io(path))
}

/// Binary PGM (`P5`, maxval 65535) of `|x|`, scaled so the panel maximum maps
/// to 65535. An all-zero image encodes as all zeros.
pub fn encode_pgm(img: &ComplexImage) -> Vec<u8> {
    let n = img.n();
    let mag: Vec<f64> = img.data().iter().map(|v| v.norm()).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{n} {n}\n65535\n").into_bytes();
    out.reserve(2 * n * n);
    for m in mag {
        let v = if max > 0.0 { (m / max * 65535.0).round() as u16 } else { 0 };
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Loss-versus-gridsize table for one SNR and method, longest grid first.
///
/// One row per (candidate, metric) with `metric ∈ {outer_loss,
/// one_minus_nrmse, ssim}`; the `baseline` column repeats the uniform value
/// at `N = n0` on every row. Missing modes leave empty cells.
pub fn curve_csv(snr: f64, n0: usize, uniform: Option<&DesignResult>, nonuniform: Option<&DesignResult>) -> String {
    let mut ns: Vec<usize> =
        uniform.iter().chain(nonuniform.iter()).flat_map(|r| r.candidates.iter().map(|c| c.n)).collect();
    ns.sort_unstable_by(|a, b| b.cmp(a));
    ns.dedup();
    let method = uniform.or(nonuniform).map(|r| r.method.to_string()).unwrap_or_default();
    type Metric = fn(&kdesign::design::CandidateResult) -> f64;
    let metrics: [(&str, Metric); 3] =
        [("outer_loss", |c| c.outer_loss), ("one_minus_nrmse", |c| 1.0 - c.outer_nrmse), ("ssim", |c| c.outer_ssim)];
    let mut s = String::from("snr,method,n,resolution_pct,metric,uniform,nonuniform,baseline\n");
    for &n in &ns {
        for (name, f) in &metrics {
            let get = |r: Option<&DesignResult>, n: usize| r.and_then(|r| r.candidate(n)).map(f);
            let _ = writeln!(
                s,
                "{snr},{method},{n},{},{name},{},{},{}",
                n as f64 / n0 as f64 * 100.0,
                cell(get(uniform, n)),
                cell(get(nonuniform, n)),
                cell(get(uniform, n0)),
            );
        }
    }
    s
}

/// One evaluated reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceRow {
    pub snr: f64,
    pub method: String,
    /// `baseline`, `uniform` or `nonuniform`.
    pub design: String,
    pub n: usize,
    pub slice: usize,
    pub draw: usize,
    pub nrmse: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub snr: f64,
    pub method: String,
    pub design: String,
    pub n: usize,
    pub nrmse_mean: f64,
    pub nrmse_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

pub fn per_slice_csv(rows: &[SliceRow]) -> String {
    let mut s = String::from("snr,method,design,n,slice,draw,nrmse,ssim\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:e},{:e}",
            r.snr, r.method, r.design, r.n, r.slice, r.draw, r.nrmse, r.ssim
        );
    }
    s
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("snr,method,design,n_hat,nrmse_mean,nrmse_std,ssim_mean,ssim_std\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{:e},{:e},{:e}",
            r.snr, r.method, r.design, r.n, r.nrmse_mean, r.nrmse_std, r.ssim_mean, r.ssim_std
        );
    }
    s
}

/// Fixed-width comparison table of baseline and optimised designs.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:>6}  {:<12} {:<11} {:>5}  {:<19} {:<19}\n",
        "SNR", "method", "mode", "N", "NRMSE mean±std", "SSIM mean±std"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6}  {:<12} {:<11} {:>5}  {:<19} {:<19}",
            r.snr,
            r.method,
            r.design,
            r.n,
            format!("{:.4}±{:.4}", r.nrmse_mean, r.nrmse_std),
            format!("{:.4}±{:.4}", r.ssim_mean, r.ssim_std),
        );
    }
    s
}
