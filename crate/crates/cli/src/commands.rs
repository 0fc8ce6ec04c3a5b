// SPDX-License-Identifier: Apache-2.0

//! The four subcommands. Every file they write lives under the configured
//! output directory:
//!
//! ```text
//! <output>/dataset.kds, dataset.kds.manifest
//! <output>/designs/snr<S>_<method>_<mode>.result
//! <output>/designs/snr<S>_<method>_curves.csv
//! <output>/evaluation/per_slice.csv, summary.csv
//! <output>/images/snr<S>/<panel>.pgm
//! <output>/summary.txt, sweep.state
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use kdesign::design::{grid_search, DesignResult, Mode};
use kdesign::kspace::{crop_kspace, uniform_pattern, unit_noise, AveragingPattern};
use kdesign::metrics::{mean_std, nrmse, ssim};
use kdesign::phantom::{calibrate_sigma, generate_dataset, load_dataset, lowres_pair, save_dataset, Dataset, Split};
use kdesign::recon::{apply_noise_and_reconstruct, EncodingModel, Method, ReconParams};
use kdesign::rng::{derive_seed, Stream};
use kdesign::ComplexImage;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::report::{
    curve_csv, dataset_sha256, encode_pgm, per_slice_csv, summary_csv, summary_table, write_atomic, SliceRow,
    SummaryRow,
};
use crate::result::{parse_result, render_result, DesignRecord};

/// Evaluation noise ids carry this tag so they never coincide with the
/// `[slice, n]` ids used for validation-set selection.
const EVAL_TAG: u64 = u64::MAX;

pub fn designs_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.join("designs")
}

pub fn result_path(cfg: &ExperimentConfig, snr: f64, method: Method, mode: Mode) -> PathBuf {
    designs_dir(cfg).join(format!("snr{snr}_{method}_{mode}.result"))
}

pub fn curve_path(cfg: &ExperimentConfig, snr: f64, method: Method) -> PathBuf {
    designs_dir(cfg).join(format!("snr{snr}_{method}_curves.csv"))
}

pub fn evaluation_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.join("evaluation")
}

pub fn state_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.join("sweep.state")
}

fn pool(cfg: &ExperimentConfig) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::InvalidConfig(format!("cannot start {} workers: {e}", cfg.workers)))
}

fn load(cfg: &ExperimentConfig) -> CliResult<(Dataset, String)> {
    let path = cfg.dataset_file();
    let ds = load_dataset(&path).map_err(|e| match e {
        kdesign::Error::Io(source) => CliError::Io { path: path.clone(), source },
        other => CliError::Core(other),
    })?;
    if ds.n0() != cfg.dataset.n0 {
        return Err(CliError::InvalidConfig(format!(
            "dataset at {} has n0 = {}, config says {}",
            path.display(),
            ds.n0(),
            cfg.dataset.n0
        )));
    }
    Ok((ds, dataset_sha256(&path)?))
}

fn sigmas(cfg: &ExperimentConfig, ds: &Dataset) -> CliResult<Vec<(f64, f64)>> {
    let budget = cfg.budget()?;
    cfg.snr.iter().map(|&snr| Ok((snr, calibrate_sigma(ds, &budget, snr)?))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub slices: usize,
    pub coils: usize,
    pub n0: usize,
    pub split: (usize, usize, usize),
    pub sigma: Vec<(f64, f64)>,
    pub sha256: String,
}

impl fmt::Display for GenerateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dataset {}", self.path.display())?;
        writeln!(
            f,
            "T = {} ({} train / {} validation / {} test), L = {}, N0 = {}",
            self.slices, self.split.0, self.split.1, self.split.2, self.coils, self.n0
        )?;
        for (snr, s) in &self.sigma {
            writeln!(f, "SNR {snr}: sigma = {s:.6e}")?;
        }
        write!(f, "sha256 {}", self.sha256)
    }
}

pub fn generate(cfg: &ExperimentConfig) -> CliResult<GenerateSummary> {
    cfg.validate()?;
    let path = cfg.dataset_file();
    if !path.starts_with(&cfg.output) {
        return Err(CliError::InvalidConfig(format!(
            "generate only writes under the output directory; dataset.path {} is outside {}",
            path.display(),
            cfg.output.display()
        )));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let ds = generate_dataset(&cfg.dataset)?;
    save_dataset(&ds, &path).map_err(|e| match e {
        kdesign::Error::Io(source) => CliError::Io { path: path.clone(), source },
        other => CliError::Core(other),
    })?;
    let split = (ds.indices(Split::Train).len(), ds.indices(Split::Validation).len(), ds.indices(Split::Test).len());
    Ok(GenerateSummary {
        slices: ds.len(),
        coils: ds.coils(),
        n0: ds.n0(),
        split,
        sigma: sigmas(cfg, &ds)?,
        sha256: dataset_sha256(&path)?,
        path,
    })
}

/// Identifies one design cell in logs, errors and the state file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub snr: f64,
    pub method: Method,
    pub mode: Mode,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "design snr={} method={} mode={}", self.snr, self.method, self.mode)
    }
}

/// Completed sweep steps, persisted one key per line after a header naming
/// the config they belong to.
struct State {
    path: PathBuf,
    config: String,
    done: Mutex<BTreeSet<String>>,
}

impl State {
    fn open(cfg: &ExperimentConfig) -> CliResult<Self> {
        let path = state_path(cfg);
        let config = hex::encode(Sha256::digest(cfg.render()?.as_bytes()));
        let mut done = BTreeSet::new();
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                let mut lines = text.lines().enumerate();
                match lines.next() {
                    Some((_, h)) if h == format!("config {config}") => {
                        for (i, l) in lines {
                            let key = l
                                .strip_prefix("done ")
                                .ok_or_else(|| CliError::State { line: i + 1, reason: format!("bad entry '{l}'") })?;
                            done.insert(key.to_string());
                        }
                    }
                    _ => log::info!("{} belongs to another config; starting over", path.display()),
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(CliError::Io { path, source: e }),
        }
        Ok(Self { path, config, done: Mutex::new(done) })
    }

    fn is_done(&self, key: &str) -> bool {
        self.done.lock().expect("state lock").contains(key)
    }

    fn mark(&self, key: &str) -> CliResult<()> {
        let mut done = self.done.lock().expect("state lock");
        done.insert(key.to_string());
        let mut text = format!("config {}\n", self.config);
        for k in done.iter() {
            text.push_str("done ");
            text.push_str(k);
            text.push('\n');
        }
        write_atomic(&self.path, text.as_bytes())
    }
}

fn read_record(path: &Path, sha: &str) -> CliResult<DesignRecord> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(CliError::MissingResult(path.to_path_buf())),
        Err(e) => return Err(CliError::Io { path: path.to_path_buf(), source: e }),
    };
    let rec = parse_result(&text)?;
    if rec.dataset_sha256 != sha {
        return Err(CliError::DatasetMismatch { expected: rec.dataset_sha256, found: sha.to_string() });
    }
    Ok(rec)
}

fn run_cells(cfg: &ExperimentConfig, ds: &Dataset, sha: &str, state: Option<&State>) -> CliResult<Vec<DesignRecord>> {
    let sig = sigmas(cfg, ds)?;
    let budget = cfg.budget()?;
    // uniform before nonuniform inside a chain: the nonuniform search starts from the uniform parameters
    let mut modes = cfg.modes.clone();
    modes.sort_by_key(|m| *m != Mode::Uniform);
    let chains: Vec<(f64, f64, Method)> =
        sig.iter().flat_map(|&(snr, sigma)| cfg.methods.iter().map(move |&m| (snr, sigma, m))).collect();

    let run_chain = |&(snr, sigma, method): &(f64, f64, Method)| -> CliResult<Vec<DesignRecord>> {
        let mut out: Vec<DesignRecord> = Vec::new();
        for &mode in &modes {
            let cell = Cell { snr, method, mode };
            let key = cell.to_string();
            let path = result_path(cfg, snr, method, mode);
            if let Some(st) = state {
                if st.is_done(&key) {
                    match read_record(&path, sha) {
                        Ok(rec) => {
                            log::info!("{cell}: already done");
                            out.push(rec);
                            continue;
                        }
                        Err(e) => log::warn!("{cell}: recorded as done but unusable ({e}); rerunning"),
                    }
                }
            }
            log::info!("{cell}: training");
            let problem = cfg.problem(method, mode, sigma)?;
            let warm = out.iter().find(|r| r.result.mode == Mode::Uniform).map(|r| &r.result);
            let result = grid_search(&problem, ds, cfg.seed, warm.filter(|_| mode == Mode::Nonuniform))
                .map_err(|source| CliError::Cell { cell: key.clone(), source })?;
            let rec = DesignRecord {
                dataset_sha256: sha.to_string(),
                seed: cfg.seed,
                snr,
                budget: budget.with_sigma(sigma)?,
                result,
            };
            write_atomic(&path, render_result(&rec).as_bytes())?;
            if let Some(st) = state {
                st.mark(&key)?;
            }
            out.push(rec);
        }
        let get = |m: Mode| out.iter().find(|r| r.result.mode == m).map(|r| &r.result);
        let csv = curve_csv(snr, budget.n0(), get(Mode::Uniform), get(Mode::Nonuniform));
        write_atomic(&curve_path(cfg, snr, method), csv.as_bytes())?;
        Ok(out)
    };

    let results: Vec<CliResult<Vec<DesignRecord>>> = pool(cfg)?.install(|| chains.par_iter().map(run_chain).collect());
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    Ok(all)
}

/// Runs the grid search for every SNR × method × mode cell and writes one
/// result file per cell plus one curve table per SNR × method.
pub fn design(cfg: &ExperimentConfig) -> CliResult<Vec<DesignRecord>> {
    cfg.validate()?;
    let (ds, sha) = load(cfg)?;
    run_cells(cfg, &ds, &sha, None)
}

/// A design to evaluate: gridsize, pattern and parameters.
struct Candidate {
    method: String,
    design: String,
    n: usize,
    w: AveragingPattern,
    params: ReconParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<SliceRow>,
    pub summary: Vec<SummaryRow>,
}

fn evaluation_noise(seed: u64, coils: usize, n0: usize, slice: usize, draw: usize) -> kdesign::MultiCoilKSpace {
    unit_noise(coils, n0, derive_seed(seed, Stream::EvaluationNoise, &[EVAL_TAG, slice as u64, draw as u64]))
}

/// Reconstructs every test slice under `eval_draws` noise draws for each
/// design and reports NRMSE/SSIM against the full-resolution reference.
///
/// Per SNR the designs are: zero-filled at `n0` with uniform averaging, then
/// for each method the baseline (the uniform search's `n0` candidate), the
/// optimised uniform design and the optimised nonuniform design. Draw `k` of
/// slice `t` uses the same `n0`-grid noise for every design, cropped to the
/// design's gridsize, so comparisons are paired.
pub fn evaluate(cfg: &ExperimentConfig) -> CliResult<Evaluation> {
    cfg.validate()?;
    let (ds, sha) = load(cfg)?;
    evaluate_loaded(cfg, &ds, &sha)
}

fn evaluate_loaded(cfg: &ExperimentConfig, ds: &Dataset, sha: &str) -> CliResult<Evaluation> {
    let n0 = ds.n0();
    let budget = cfg.budget()?;
    let tests = ds.indices(Split::Test);
    let refs: Vec<ComplexImage> =
        tests.iter().map(|&t| Ok(lowres_pair(&ds.kspace[t], &ds.maps, n0)?.1.pixels)).collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (snr, sigma) in sigmas(cfg, ds)? {
        let b = budget.with_sigma(sigma)?;
        let full = uniform_pattern(n0, &b)?;
        let mut designs = vec![Candidate {
            method: Method::ZeroFilled.to_string(),
            design: "baseline".into(),
            n: n0,
            w: full.clone(),
            params: ReconParams::ZeroFilled,
        }];
        for &method in &cfg.methods {
            let mut recs: Vec<(Mode, DesignResult)> = Vec::new();
            for &mode in &cfg.modes {
                recs.push((mode, read_record(&result_path(cfg, snr, method, mode), sha)?.result));
            }
            if let Some((_, r)) = recs.iter().find(|(m, _)| *m == Mode::Uniform) {
                if let Some(c) = r.candidate(n0) {
                    designs.push(Candidate {
                        method: method.to_string(),
                        design: "baseline".into(),
                        n: n0,
                        w: full.clone(),
                        params: c.params.clone(),
                    });
                }
            }
            for mode in [Mode::Uniform, Mode::Nonuniform] {
                if let Some((_, r)) = recs.iter().find(|(m, _)| *m == mode) {
                    designs.push(Candidate {
                        method: method.to_string(),
                        design: mode.to_string(),
                        n: r.n_hat,
                        w: r.w_hat().clone(),
                        params: r.p_hat().clone(),
                    });
                }
            }
        }

        let jobs: Vec<(usize, usize)> =
            (0..tests.len()).flat_map(|i| (0..cfg.eval_draws).map(move |k| (i, k))).collect();
        let mut first_images: Vec<(String, ComplexImage)> = Vec::new();
        for d in &designs {
            let model = EncodingModel::new(&ds.maps, d.n)?;
            let out: Vec<CliResult<(f64, f64, Option<ComplexImage>)>> = pool(cfg)?.install(|| {
                jobs.par_iter()
                    .map(|&(i, k)| {
                        let t = tests[i];
                        let noise = crop_kspace(&evaluation_noise(cfg.seed, ds.coils(), n0, t, k), d.n)?;
                        let clean = crop_kspace(&ds.kspace[t], d.n)?;
                        let x = apply_noise_and_reconstruct(&clean, &noise, &d.w, sigma, &d.params, &model, &cfg.admm)?;
                        let (e, s) = (nrmse(&x, &refs[i])?, ssim(&x, &refs[i])?);
                        Ok((e, s, (i == 0 && k == 0).then_some(x)))
                    })
                    .collect()
            });
            let (mut es, mut ss) = (Vec::new(), Vec::new());
            for (&(i, k), r) in jobs.iter().zip(out) {
                let (e, s, img) = r?;
                rows.push(SliceRow {
                    snr,
                    method: d.method.clone(),
                    design: d.design.clone(),
                    n: d.n,
                    slice: tests[i],
                    draw: k,
                    nrmse: e,
                    ssim: s,
                });
                es.push(e);
                ss.push(s);
                if let Some(img) = img {
                    first_images.push((format!("{}_{}", d.method, d.design), img));
                }
            }
            let (nrmse_mean, nrmse_std) = mean_std(&es);
            let (ssim_mean, ssim_std) = mean_std(&ss);
            summary.push(SummaryRow {
                snr,
                method: d.method.clone(),
                design: d.design.clone(),
                n: d.n,
                nrmse_mean,
                nrmse_std,
                ssim_mean,
                ssim_std,
            });
        }
        let dir = cfg.output.join("images").join(format!("snr{snr}"));
        write_atomic(&dir.join(format!("slice{}_truth.pgm", tests[0])), &encode_pgm(&refs[0]))?;
        for (name, img) in &first_images {
            write_atomic(&dir.join(format!("slice{}_{name}.pgm", tests[0])), &encode_pgm(img))?;
        }
    }
    let dir = evaluation_dir(cfg);
    write_atomic(&dir.join("per_slice.csv"), per_slice_csv(&rows).as_bytes())?;
    write_atomic(&dir.join("summary.csv"), summary_csv(&summary).as_bytes())?;
    Ok(Evaluation { rows, summary })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub designs: Vec<DesignRecord>,
    pub evaluation: Evaluation,
    pub table: String,
}

/// generate → design → evaluate, resumable through `<output>/sweep.state`.
/// A step is skipped when the state file marks it done and its output still
/// matches the dataset on disk.
pub fn sweep(cfg: &ExperimentConfig) -> CliResult<SweepSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output).map_err(CliError::io(&cfg.output))?;
    let state = State::open(cfg)?;
    let external = !cfg.dataset_file().starts_with(&cfg.output);
    let have_dataset = external || (state.is_done("generate") && load(cfg).is_ok());
    if !have_dataset {
        let g = generate(cfg)?;
        log::info!("{g}");
        state.mark("generate")?;
    }
    let (ds, sha) = load(cfg)?;
    let designs = run_cells(cfg, &ds, &sha, Some(&state))?;
    let evaluation = evaluate_loaded(cfg, &ds, &sha)?;
    state.mark("evaluate")?;
    let table = summary_table(&evaluation.summary);
    write_atomic(&cfg.output.join("summary.txt"), table.as_bytes())?;
    Ok(SweepSummary { designs, evaluation, table })
}
