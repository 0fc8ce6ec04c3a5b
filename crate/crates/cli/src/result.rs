// SPDX-License-Identifier: Apache-2.0

//! Design result files.
//!
//! Same line grammar as the config: a header of `key = value` pairs, then one
//! `[candidate N]` section per trained gridsize in search order.
//!
//! ```text
//! format = 1
//! dataset_sha256 = 9f2c…
//! seed = 1
//! snr = 2
//! sigma = 7.848e-1
//! n0 = 64
//! w0 = 8
//! method = apodized
//! mode = uniform
//! selection = training
//! n_hat = 40
//!
//! [candidate 40]
//! status = ok
//! inner_loss = 3.8e1
//! outer_loss = 7.2e1
//! outer_nrmse = 2.9e-1
//! outer_ssim = 4.5e-1
//! max_budget_residual = 0e0
//! q = 12, 12, …
//! window = 1e0, …        # apodized only, centered row-major order
//! lambda = 3.1e-2        # sense-tv only
//! curve = 5.6e1, …
//! ```
//!
//! The pattern used by a candidate is not stored: it is the uniform pattern in
//! uniform mode (and for diverged candidates) and `q · n0/N` otherwise.

use std::fmt::Write as _;

use kdesign::design::{CandidateResult, DesignResult, Mode, Selection};
use kdesign::kspace::{effective_from_actual, uniform_pattern, AcquisitionBudget, IntegerAveragingPattern};
use kdesign::recon::{ApodizationWindow, Method, ReconParams};

use crate::error::{CliError, CliResult};

pub const RESULT_FORMAT: u32 = 1;
/// Largest `n0` a result file may declare.
const MAX_N0: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq)]
pub struct DesignRecord {
    pub dataset_sha256: String,
    pub seed: u64,
    pub snr: f64,
    pub budget: AcquisitionBudget,
    pub result: DesignResult,
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ")
}

pub fn render_result(rec: &DesignRecord) -> String {
    let r = &rec.result;
    let b = &rec.budget;
    let mut s = String::new();
    let _ = writeln!(s, "format = {RESULT_FORMAT}");
    let _ = writeln!(s, "dataset_sha256 = {}", rec.dataset_sha256);
    let _ = writeln!(s, "seed = {}", rec.seed);
    let _ = writeln!(s, "snr = {}", rec.snr);
    let _ = writeln!(s, "sigma = {:e}", b.sigma());
    let _ = writeln!(s, "n0 = {}\nw0 = {}", b.n0(), b.w0());
    let _ = writeln!(s, "method = {}\nmode = {}\nselection = {}", r.method, r.mode, r.selection);
    let _ = writeln!(s, "n_hat = {}", r.n_hat);
    for c in &r.candidates {
        let _ = writeln!(s, "\n[candidate {}]", c.n);
        match &c.diverged {
            None => {
                let _ = writeln!(s, "status = ok");
            }
            Some(reason) => {
                let _ = writeln!(s, "status = diverged: {}", reason.replace('\n', " "));
            }
        }
        let _ = writeln!(s, "inner_loss = {:e}\nouter_loss = {:e}", c.inner_loss, c.outer_loss);
        let _ = writeln!(s, "outer_nrmse = {:e}\nouter_ssim = {:e}", c.outer_nrmse, c.outer_ssim);
        let _ = writeln!(s, "max_budget_residual = {:e}", c.max_budget_residual);
        let q: Vec<String> = c.q.counts().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "q = {}", q.join(", "));
        match &c.params {
            ReconParams::ZeroFilled => {}
            ReconParams::Apodized { window } => {
                let _ = writeln!(s, "window = {}", floats(&window.to_centered()));
            }
            ReconParams::SenseTv { lambda } => {
                let _ = writeln!(s, "lambda = {lambda:e}");
            }
        }
        let _ = writeln!(s, "curve = {}", floats(&c.curve));
    }
    s
}

fn bad(line: usize, reason: impl Into<String>) -> CliError {
    CliError::ResultSyntax { line, reason: reason.into() }
}

#[derive(Default)]
struct Fields {
    entries: Vec<(String, String, usize)>,
    line: usize,
}

impl Fields {
    fn take(&mut self, key: &str) -> CliResult<(String, usize)> {
        let i = self
            .entries
            .iter()
            .position(|(k, _, _)| k == key)
            .ok_or_else(|| bad(self.line, format!("missing key '{key}'")))?;
        let (_, v, l) = self.entries.remove(i);
        Ok((v, l))
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<T> {
        let (v, l) = self.take(key)?;
        v.parse().map_err(|_| bad(l, format!("cannot parse '{v}' as '{key}'")))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<Vec<T>> {
        let (v, l) = self.take(key)?;
        parse_list(&v, l, key)
    }

    fn finish(self) -> CliResult<()> {
        match self.entries.first() {
            Some((k, _, l)) => Err(bad(*l, format!("unexpected key '{k}'"))),
            None => Ok(()),
        }
    }
}

fn parse_list<T: std::str::FromStr>(v: &str, line: usize, key: &str) -> CliResult<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|x| x.trim().parse().map_err(|_| bad(line, format!("bad entry '{}' in '{key}'", x.trim()))))
        .collect()
}

fn split_sections(text: &str) -> CliResult<(Fields, Vec<(usize, Fields)>)> {
    let mut header = Fields { line: 1, ..Default::default() };
    let mut sections: Vec<(usize, Fields)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some(rest) = t.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| bad(line, "unterminated section header"))?;
            let n = name
                .trim()
                .strip_prefix("candidate ")
                .and_then(|v| v.trim().parse::<usize>().ok())
                .ok_or_else(|| bad(line, format!("unknown section [{name}]")))?;
            sections.push((n, Fields { line, ..Default::default() }));
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| bad(line, "expected 'key = value'"))?;
        let fields = sections.last_mut().map(|(_, f)| f).unwrap_or(&mut header);
        let k = k.trim().to_string();
        if fields.entries.iter().any(|(e, _, _)| *e == k) {
            return Err(bad(line, format!("key '{k}' repeated")));
        }
        fields.entries.push((k, v.trim().to_string(), line));
    }
    Ok((header, sections))
}

pub fn parse_result(text: &str) -> CliResult<DesignRecord> {
    let (mut h, sections) = split_sections(text)?;
    let format: u32 = h.get("format")?;
    if format != RESULT_FORMAT {
        return Err(bad(1, format!("unsupported result format {format}")));
    }
    let (sha, sha_line) = h.take("dataset_sha256")?;
    if sha.len() != 64 || !sha.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad(sha_line, "dataset_sha256 must be 64 hex digits"));
    }
    let seed: u64 = h.get("seed")?;
    let snr: f64 = h.get("snr")?;
    let sigma: f64 = h.get("sigma")?;
    let n0: usize = h.get("n0")?;
    if n0 > MAX_N0 {
        return Err(bad(h.line, format!("n0 {n0} exceeds {MAX_N0}")));
    }
    let w0: u32 = h.get("w0")?;
    let method: Method = h.get("method")?;
    let mode: Mode = h.get("mode")?;
    let selection: Selection = h.get("selection")?;
    let n_hat: usize = h.get("n_hat")?;
    h.finish()?;
    let budget = AcquisitionBudget::new(n0, w0, sigma)?;

    let mut candidates = Vec::with_capacity(sections.len());
    for (n, mut f) in sections {
        let at = f.line;
        budget.check_gridsize(n).map_err(|e| bad(at, e.to_string()))?;
        if candidates.iter().any(|c: &CandidateResult| c.n == n) {
            return Err(bad(at, format!("candidate {n} listed twice")));
        }
        let (status, status_line) = f.take("status")?;
        let diverged = match status.as_str() {
            "ok" => None,
            s => Some(
                s.strip_prefix("diverged:")
                    .ok_or_else(|| bad(status_line, format!("unknown status '{s}'")))?
                    .trim()
                    .to_string(),
            ),
        };
        let inner_loss: f64 = f.get("inner_loss")?;
        let outer_loss: f64 = f.get("outer_loss")?;
        let outer_nrmse: f64 = f.get("outer_nrmse")?;
        let outer_ssim: f64 = f.get("outer_ssim")?;
        let max_budget_residual: f64 = f.get("max_budget_residual")?;
        let (qv, q_line) = f.take("q")?;
        let counts: Vec<u64> = parse_list(&qv, q_line, "q")?;
        if counts.len() != n {
            return Err(bad(q_line, format!("q has {} entries, candidate is {n}", counts.len())));
        }
        let q = IntegerAveragingPattern::new(counts, &budget).map_err(|e| bad(q_line, e.to_string()))?;
        let params = match method {
            Method::ZeroFilled => ReconParams::ZeroFilled,
            Method::Apodized => {
                let (v, l) = f.take("window")?;
                let values: Vec<f64> = parse_list(&v, l, "window")?;
                let window = ApodizationWindow::from_centered(n, &values).map_err(|e| bad(l, e.to_string()))?;
                ReconParams::Apodized { window }
            }
            Method::SenseTv => {
                let (v, l) = f.take("lambda")?;
                let lambda: f64 = v.parse().map_err(|_| bad(l, format!("cannot parse lambda '{v}'")))?;
                ReconParams::sense_tv(lambda).map_err(|e| bad(l, e.to_string()))?
            }
        };
        let curve: Vec<f64> = f.list("curve")?;
        f.finish()?;
        let w = if mode == Mode::Nonuniform && diverged.is_none() {
            effective_from_actual(&q, &budget)
        } else {
            uniform_pattern(n, &budget)?
        };
        candidates.push(CandidateResult {
            n,
            params,
            w,
            q,
            inner_loss,
            outer_loss,
            outer_nrmse,
            outer_ssim,
            curve,
            max_budget_residual,
            diverged,
        });
    }
    if !candidates.iter().any(|c| c.n == n_hat) {
        return Err(bad(1, format!("n_hat {n_hat} is not one of the candidates")));
    }
    Ok(DesignRecord {
        dataset_sha256: sha.to_ascii_lowercase(),
        seed,
        snr,
        budget,
        result: DesignResult { method, mode, selection, n_hat, candidates },
    })
}
