// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration.
//!
//! Grammar (line oriented, UTF-8):
//!
//! ```text
//! file    := line*
//! line    := blank | comment | section | pair
//! comment := '#' any*
//! section := '[' name ']'
//! pair    := key '=' value
//! ```
//!
//! Keys and values are trimmed. Lists are comma separated. Pairs before the
//! first section belong to the top level. Unknown sections or keys, repeated
//! keys and repeated sections are errors. Relative paths are taken as given
//! (relative to the working directory).
//!
//! ```text
//! seed = 1
//! output = runs/desk
//! workers = 1
//!
//! [dataset]
//! n0 = 64
//! coils = 4
//! train = 32
//! validation = 8
//! test = 8
//! complexity = 6
//! seed = 0
//! # path = /data/phantoms.kds   (optional; default <output>/dataset.kds)
//!
//! [budget]
//! w0 = 8
//!
//! [experiment]
//! snr = 2, 10
//! methods = apodized, sense-tv
//! modes = uniform, nonuniform
//! candidates = 16, 24, 32, 40, 48, 56, 64
//! selection = training
//! eval_draws = 10
//!
//! [admm]
//! iterations = 50
//! rho_scale = 10        # or: rho = <fixed value>
//! cg_iterations = 10
//! cg_tolerance = 0.00000001
//!
//! [train.sense-tv.nonuniform]
//! epochs = 6
//! rounding_epoch = 5    # or: none
//! lr_w = 4
//! candidates = 16, 32, 64
//! ```
//!
//! A `[train.<method>.<mode>]` section overrides any of `lr_p`, `decay_p`,
//! `lr_w`, `decay_w`, `epochs`, `batch_size`, `rounding_epoch` and
//! `candidates` for that cell; everything else comes from the reference
//! schedule. Keys missing from a file take the desk-scale defaults of
//! [`ExperimentConfig::default`], except the train sections: a file gets
//! exactly the overrides it lists. `--dump-config` prints all of them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kdesign::design::{default_candidates, default_hyperparameters, DesignProblem, Mode, Selection};
use kdesign::kspace::AcquisitionBudget;
use kdesign::phantom::DatasetSpec;
use kdesign::recon::{AdmmConfig, Method, Rho};

use crate::error::{CliError, CliResult};

pub const DATASET_FILE: &str = "dataset.kds";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOverride {
    pub method: Method,
    pub mode: Mode,
    pub lr_p: Option<f64>,
    pub decay_p: Option<f64>,
    pub lr_w: Option<f64>,
    pub decay_w: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    /// `Some(None)` disables the rounding epoch explicitly.
    pub rounding_epoch: Option<Option<usize>>,
    pub candidates: Option<Vec<usize>>,
}

impl TrainOverride {
    pub fn new(method: Method, mode: Mode) -> Self {
        Self {
            method,
            mode,
            lr_p: None,
            decay_p: None,
            lr_w: None,
            decay_w: None,
            epochs: None,
            batch_size: None,
            rounding_epoch: None,
            candidates: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: PathBuf,
    /// Sweep cells trained concurrently.
    pub workers: usize,
    pub dataset_path: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub w0: u32,
    pub snr: Vec<f64>,
    pub methods: Vec<Method>,
    pub modes: Vec<Mode>,
    /// `None` means the default grid for `n0`.
    pub candidates: Option<Vec<usize>>,
    pub selection: Selection,
    /// Noise draws per test slice during evaluation.
    pub eval_draws: usize,
    pub admm: AdmmConfig,
    pub train: Vec<TrainOverride>,
}

impl Default for ExperimentConfig {
    /// Desk-scale experiment: 64×64, 4 coils, 32/8/8 slices, SNR 2 and 10.
    ///
    /// The reference learning rates assume ~330 steps per epoch; with 32
    /// training slices there are 4, so the pattern and TV-weight rates are
    /// raised and the SENSE-TV runs are shortened and restricted to five
    /// gridsizes.
    fn default() -> Self {
        let mut apod_nu = TrainOverride::new(Method::Apodized, Mode::Nonuniform);
        apod_nu.lr_w = Some(4.0);
        let mut stv_u = TrainOverride::new(Method::SenseTv, Mode::Uniform);
        stv_u.lr_p = Some(0.05);
        stv_u.candidates = Some(vec![16, 24, 32, 48, 64]);
        let mut stv_nu = TrainOverride::new(Method::SenseTv, Mode::Nonuniform);
        stv_nu.lr_p = Some(0.01);
        stv_nu.lr_w = Some(4.0);
        stv_nu.epochs = Some(6);
        stv_nu.rounding_epoch = Some(Some(5));
        stv_nu.candidates = Some(vec![16, 24, 32, 48, 64]);
        Self {
            seed: 1,
            output: PathBuf::from("kdesign-out"),
            workers: 1,
            dataset_path: None,
            dataset: DatasetSpec::default(),
            w0: 8,
            snr: vec![2.0, 10.0],
            methods: vec![Method::Apodized, Method::SenseTv],
            modes: vec![Mode::Uniform, Mode::Nonuniform],
            candidates: None,
            selection: Selection::Training,
            eval_draws: 10,
            admm: AdmmConfig::default(),
            train: vec![apod_nu, stv_u, stv_nu],
        }
    }
}

fn syntax(line: usize, reason: impl Into<String>) -> CliError {
    CliError::ConfigSyntax { line, reason: reason.into() }
}

fn invalid(reason: impl Into<String>) -> CliError {
    CliError::InvalidConfig(reason.into())
}

fn scalar<T: FromStr>(line: usize, key: &str, value: &str) -> CliResult<T> {
    value.parse().map_err(|_| syntax(line, format!("cannot parse '{value}' as the value of '{key}'")))
}

fn list<T: FromStr>(line: usize, key: &str, value: &str) -> CliResult<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| scalar(line, key, v.trim())).collect()
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn path_str(p: &Path) -> CliResult<&str> {
    p.to_str().ok_or_else(|| invalid(format!("path {} is not valid UTF-8", p.display())))
}

enum Section {
    Top,
    Dataset,
    Budget,
    Experiment,
    Admm,
    Train(usize),
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = ExperimentConfig::default();
        // overrides come only from the file
        cfg.train.clear();
        let mut section = Section::Top;
        let mut seen_sections: Vec<String> = Vec::new();
        let mut seen_keys: Vec<String> = Vec::new();
        let mut rho_scale: Option<f64> = None;
        let mut rho_fixed: Option<f64> = None;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if let Some(rest) = t.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| syntax(line, "unterminated section header"))?.trim();
                if seen_sections.iter().any(|s| s == name) {
                    return Err(syntax(line, format!("section [{name}] appears twice")));
                }
                seen_sections.push(name.to_string());
                seen_keys.clear();
                section = match name {
                    "dataset" => Section::Dataset,
                    "budget" => Section::Budget,
                    "experiment" => Section::Experiment,
                    "admm" => Section::Admm,
                    other => {
                        let parts: Vec<&str> = other.split('.').collect();
                        match parts.as_slice() {
                            ["train", method, mode] => {
                                let method: Method = method.parse().map_err(|e| syntax(line, format!("{e}")))?;
                                let mode: Mode = mode.parse().map_err(|e| syntax(line, format!("{e}")))?;
                                cfg.train.push(TrainOverride::new(method, mode));
                                Section::Train(cfg.train.len() - 1)
                            }
                            _ => return Err(syntax(line, format!("unknown section [{other}]"))),
                        }
                    }
                };
                continue;
            }
            let (key, value) = t.split_once('=').ok_or_else(|| syntax(line, "expected 'key = value'"))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(syntax(line, "empty key"));
            }
            if seen_keys.iter().any(|k| k == key) {
                return Err(syntax(line, format!("key '{key}' repeated in the same section")));
            }
            seen_keys.push(key.to_string());
            let unknown = || syntax(line, format!("unknown key '{key}'"));
            match &section {
                Section::Top => match key {
                    "seed" => cfg.seed = scalar(line, key, value)?,
                    "output" => cfg.output = PathBuf::from(value),
                    "workers" => cfg.workers = scalar(line, key, value)?,
                    _ => return Err(unknown()),
                },
                Section::Dataset => match key {
                    "path" => cfg.dataset_path = Some(PathBuf::from(value)),
                    "n0" => cfg.dataset.n0 = scalar(line, key, value)?,
                    "coils" => cfg.dataset.coils = scalar(line, key, value)?,
                    "train" => cfg.dataset.train = scalar(line, key, value)?,
                    "validation" => cfg.dataset.validation = scalar(line, key, value)?,
                    "test" => cfg.dataset.test = scalar(line, key, value)?,
                    "complexity" => cfg.dataset.complexity = scalar(line, key, value)?,
                    "seed" => cfg.dataset.seed = scalar(line, key, value)?,
                    _ => return Err(unknown()),
                },
                Section::Budget => match key {
                    "w0" => cfg.w0 = scalar(line, key, value)?,
                    _ => return Err(unknown()),
                },
                Section::Experiment => match key {
                    "snr" => cfg.snr = list(line, key, value)?,
                    "methods" => cfg.methods = list(line, key, value)?,
                    "modes" => cfg.modes = list(line, key, value)?,
                    "candidates" => cfg.candidates = Some(list(line, key, value)?),
                    "selection" => cfg.selection = scalar(line, key, value)?,
                    "eval_draws" => cfg.eval_draws = scalar(line, key, value)?,
                    _ => return Err(unknown()),
                },
                Section::Admm => match key {
                    "iterations" => cfg.admm.iterations = scalar(line, key, value)?,
                    "rho_scale" => rho_scale = Some(scalar(line, key, value)?),
                    "rho" => rho_fixed = Some(scalar(line, key, value)?),
                    "cg_iterations" => cfg.admm.cg_iterations = scalar(line, key, value)?,
                    "cg_tolerance" => cfg.admm.cg_tolerance = scalar(line, key, value)?,
                    _ => return Err(unknown()),
                },
                Section::Train(idx) => {
                    let o = &mut cfg.train[*idx];
                    match key {
                        "lr_p" => o.lr_p = Some(scalar(line, key, value)?),
                        "decay_p" => o.decay_p = Some(scalar(line, key, value)?),
                        "lr_w" => o.lr_w = Some(scalar(line, key, value)?),
                        "decay_w" => o.decay_w = Some(scalar(line, key, value)?),
                        "epochs" => o.epochs = Some(scalar(line, key, value)?),
                        "batch_size" => o.batch_size = Some(scalar(line, key, value)?),
                        "rounding_epoch" => {
                            o.rounding_epoch =
                                Some(if value == "none" { None } else { Some(scalar(line, key, value)?) })
                        }
                        "candidates" => o.candidates = Some(list(line, key, value)?),
                        _ => return Err(unknown()),
                    }
                }
            }
        }
        cfg.admm.rho = match (rho_scale, rho_fixed) {
            (Some(_), Some(_)) => return Err(invalid("set either admm.rho or admm.rho_scale, not both")),
            (Some(s), None) => Rho::ProportionalToLambda(s),
            (None, Some(v)) => Rho::Fixed(v),
            (None, None) => AdmmConfig::default().rho,
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(render(c)) == c`.
    pub fn render(&self) -> CliResult<String> {
        let mut s = String::new();
        let d = &self.dataset;
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output = {}", path_str(&self.output)?);
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "\n[dataset]");
        if let Some(p) = &self.dataset_path {
            let _ = writeln!(s, "path = {}", path_str(p)?);
        }
        let _ = writeln!(s, "n0 = {}\ncoils = {}\ntrain = {}", d.n0, d.coils, d.train);
        let _ = writeln!(
            s,
            "validation = {}\ntest = {}\ncomplexity = {}\nseed = {}",
            d.validation, d.test, d.complexity, d.seed
        );
        let _ = writeln!(s, "\n[budget]\nw0 = {}", self.w0);
        let _ = writeln!(s, "\n[experiment]");
        let _ = writeln!(s, "snr = {}", join(&self.snr));
        let _ = writeln!(s, "methods = {}", join(&self.methods));
        let _ = writeln!(s, "modes = {}", join(&self.modes));
        if let Some(c) = &self.candidates {
            let _ = writeln!(s, "candidates = {}", join(c));
        }
        let _ = writeln!(s, "selection = {}\neval_draws = {}", self.selection, self.eval_draws);
        let _ = writeln!(s, "\n[admm]\niterations = {}", self.admm.iterations);
        match self.admm.rho {
            Rho::ProportionalToLambda(v) => {
                let _ = writeln!(s, "rho_scale = {v}");
            }
            Rho::Fixed(v) => {
                let _ = writeln!(s, "rho = {v}");
            }
        }
        let _ = writeln!(s, "cg_iterations = {}\ncg_tolerance = {}", self.admm.cg_iterations, self.admm.cg_tolerance);
        for o in &self.train {
            let _ = writeln!(s, "\n[train.{}.{}]", o.method, o.mode);
            for (k, v) in [("lr_p", o.lr_p), ("decay_p", o.decay_p), ("lr_w", o.lr_w), ("decay_w", o.decay_w)] {
                if let Some(v) = v {
                    let _ = writeln!(s, "{k} = {v}");
                }
            }
            for (k, v) in [("epochs", o.epochs), ("batch_size", o.batch_size)] {
                if let Some(v) = v {
                    let _ = writeln!(s, "{k} = {v}");
                }
            }
            match o.rounding_epoch {
                Some(Some(r)) => {
                    let _ = writeln!(s, "rounding_epoch = {r}");
                }
                Some(None) => {
                    let _ = writeln!(s, "rounding_epoch = none");
                }
                None => {}
            }
            if let Some(c) = &o.candidates {
                let _ = writeln!(s, "candidates = {}", join(c));
            }
        }
        Ok(s)
    }

    pub fn dataset_file(&self) -> PathBuf {
        self.dataset_path.clone().unwrap_or_else(|| self.output.join(DATASET_FILE))
    }

    /// Budget at unit noise; the design commands set `σ` per SNR.
    pub fn budget(&self) -> CliResult<AcquisitionBudget> {
        Ok(AcquisitionBudget::new(self.dataset.n0, self.w0, 0.0)?)
    }

    fn override_for(&self, method: Method, mode: Mode) -> Option<&TrainOverride> {
        self.train.iter().find(|o| o.method == method && o.mode == mode)
    }

    pub fn candidates_for(&self, method: Method, mode: Mode) -> Vec<usize> {
        self.override_for(method, mode)
            .and_then(|o| o.candidates.clone())
            .or_else(|| self.candidates.clone())
            .unwrap_or_else(|| default_candidates(self.dataset.n0))
    }

    /// Design problem of one cell at noise level `sigma`.
    pub fn problem(&self, method: Method, mode: Mode, sigma: f64) -> CliResult<DesignProblem> {
        let budget = self.budget()?.with_sigma(sigma)?;
        let mut hyper = default_hyperparameters(method, mode)?;
        if let Some(o) = self.override_for(method, mode) {
            hyper.lr_p = o.lr_p.unwrap_or(hyper.lr_p);
            hyper.decay_p = o.decay_p.unwrap_or(hyper.decay_p);
            hyper.lr_w = o.lr_w.unwrap_or(hyper.lr_w);
            hyper.decay_w = o.decay_w.unwrap_or(hyper.decay_w);
            hyper.epochs = o.epochs.unwrap_or(hyper.epochs);
            hyper.batch_size = o.batch_size.unwrap_or(hyper.batch_size);
            hyper.rounding_epoch = o.rounding_epoch.unwrap_or(hyper.rounding_epoch);
        }
        let problem = DesignProblem {
            budget,
            candidates: self.candidates_for(method, mode),
            method,
            mode,
            hyper,
            admm: self.admm,
            selection: self.selection,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> CliResult<()> {
        let d = &self.dataset;
        if d.train == 0 {
            return Err(invalid("dataset.train must be >= 1"));
        }
        if d.test == 0 {
            return Err(invalid("dataset.test must be >= 1"));
        }
        if d.validation == 0 && self.selection == Selection::Validation {
            return Err(invalid("validation selection needs dataset.validation >= 1"));
        }
        if d.coils == 0 {
            return Err(invalid("dataset.coils must be >= 1"));
        }
        if self.output.as_os_str().is_empty() {
            return Err(invalid("output directory is empty"));
        }
        if self.workers == 0 {
            return Err(invalid("workers must be >= 1"));
        }
        if self.eval_draws == 0 {
            return Err(invalid("eval_draws must be >= 1"));
        }
        if self.snr.is_empty() || self.methods.is_empty() || self.modes.is_empty() {
            return Err(invalid("snr, methods and modes must each list at least one value"));
        }
        for s in &self.snr {
            if s.is_nan() || *s <= 0.0 {
                return Err(invalid(format!("SNR values must be > 0, got {s}")));
            }
        }
        let distinct = |n: usize, eq: &dyn Fn(usize, usize) -> bool| (0..n).all(|i| (0..i).all(|j| !eq(i, j)));
        if !distinct(self.snr.len(), &|i, j| self.snr[i] == self.snr[j])
            || !distinct(self.methods.len(), &|i, j| self.methods[i] == self.methods[j])
            || !distinct(self.modes.len(), &|i, j| self.modes[i] == self.modes[j])
        {
            return Err(invalid("snr, methods and modes must not repeat values"));
        }
        for (i, o) in self.train.iter().enumerate() {
            if self.train[..i].iter().any(|p| p.method == o.method && p.mode == o.mode) {
                return Err(invalid(format!("two [train.{}.{}] sections", o.method, o.mode)));
            }
        }
        let budget = self.budget()?;
        for &method in &self.methods {
            for &mode in &self.modes {
                let p = self.problem(method, mode, 0.0).map_err(|e| invalid(format!("{method} {mode}: {e}")))?;
                if mode == Mode::Uniform && !p.candidates.contains(&budget.n0()) {
                    return Err(invalid(format!(
                        "{method} uniform candidates must include n0 = {} (the baseline design)",
                        budget.n0()
                    )));
                }
            }
        }
        Ok(())
    }
}
