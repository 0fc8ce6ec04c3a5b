// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use kdesign::design::Mode;
use kdesign::kspace::{crop_kspace, uniform_pattern, unit_noise};
use kdesign::metrics::{nrmse, ssim};
use kdesign::phantom::{calibrate_sigma, load_dataset, lowres_pair, Split};
use kdesign::recon::{apply_noise_and_reconstruct, EncodingModel, Method, ReconParams};
use kdesign::rng::{derive_seed, Stream};
use kdesign_cli::commands::{self, result_path, state_path};
use kdesign_cli::{CliError, ExperimentConfig};

fn tiny(out: &Path) -> ExperimentConfig {
    let text = format!(
        "seed = 4\noutput = {}\n\
         [dataset]\nn0 = 16\ncoils = 2\ntrain = 4\nvalidation = 1\ntest = 2\ncomplexity = 2\nseed = 9\n\
         [budget]\nw0 = 4\n\
         [experiment]\nsnr = 2, 10\nmethods = apodized\nmodes = uniform, nonuniform\ncandidates = 8, 12, 16\neval_draws = 2\n\
         [train.apodized.uniform]\nepochs = 3\nbatch_size = 2\n\
         [train.apodized.nonuniform]\nepochs = 3\nbatch_size = 2\nrounding_epoch = 2\nlr_w = 2\n",
        out.display()
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn generate_is_reproducible_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tiny(&tmp.path().join("a"));
    let b = tiny(&tmp.path().join("b"));
    let sa = commands::generate(&a).unwrap();
    let sb = commands::generate(&b).unwrap();
    assert_eq!(sa.sha256, sb.sha256);
    assert_eq!(files(&a.output), files(&b.output));
    assert_eq!((sa.slices, sa.coils, sa.n0), (7, 2, 16));
    assert_eq!(sa.sigma.len(), 2);
    assert!(sa.sigma[0].1 > sa.sigma[1].1);

    let mut bad = a.clone();
    bad.dataset.train = 0;
    assert!(matches!(commands::generate(&bad), Err(CliError::InvalidConfig(_))));
    let mut outside = a.clone();
    outside.dataset_path = Some(tmp.path().join("elsewhere.kds"));
    assert!(commands::generate(&outside).is_err());
}

#[test]
fn sweep_outputs_are_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(&tmp.path().join("out"));
    let s = commands::sweep(&cfg).unwrap();
    // nothing outside the output directory
    let top: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(top, vec![std::ffi::OsString::from("out")]);

    let ds = load_dataset(&cfg.dataset_file()).unwrap();
    let tests = ds.indices(Split::Test);
    assert!(s.evaluation.rows.iter().all(|r| tests.contains(&r.slice)), "evaluation touches only test slices");
    for rec in &s.designs {
        for c in &rec.result.candidates {
            assert!(c.diverged.is_none());
        }
    }

    // the zero-filled baseline row equals a direct computation
    let budget = cfg.budget().unwrap();
    let sigma = calibrate_sigma(&ds, &budget, 2.0).unwrap();
    let w = uniform_pattern(16, &budget.with_sigma(sigma).unwrap()).unwrap();
    let model = EncodingModel::new(&ds.maps, 16).unwrap();
    let zf: Vec<_> = s
        .evaluation
        .rows
        .iter()
        .filter(|r| r.snr == 2.0 && r.method == "zero-filled" && r.design == "baseline")
        .collect();
    assert_eq!(zf.len(), tests.len() * cfg.eval_draws);
    for r in zf {
        let seed = derive_seed(cfg.seed, Stream::EvaluationNoise, &[u64::MAX, r.slice as u64, r.draw as u64]);
        let noise = crop_kspace(&unit_noise(2, 16, seed), 16).unwrap();
        let x = apply_noise_and_reconstruct(
            &ds.kspace[r.slice],
            &noise,
            &w,
            sigma,
            &ReconParams::ZeroFilled,
            &model,
            &cfg.admm,
        )
        .unwrap();
        let reference = lowres_pair(&ds.kspace[r.slice], &ds.maps, 16).unwrap().1.pixels;
        assert_eq!(r.nrmse, nrmse(&x, &reference).unwrap());
        assert_eq!(r.ssim, ssim(&x, &reference).unwrap());
    }

    // curve tables: baseline column = uniform value at 100 %, N̂ = argmax 1 − NRMSE
    let csv = std::fs::read_to_string(cfg.output.join("designs/snr2_apodized_curves.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows[0][3], "100");
    for r in rows.iter().filter(|r| r[2] == "16") {
        assert_eq!(r[5], r[7]);
    }
    let uniform = s.designs.iter().find(|d| d.snr == 2.0 && d.result.mode == Mode::Uniform).unwrap();
    let best = rows
        .iter()
        .filter(|r| r[4] == "one_minus_nrmse")
        .max_by(|a, b| a[5].parse::<f64>().unwrap().total_cmp(&b[5].parse::<f64>().unwrap()))
        .unwrap();
    assert_eq!(best[2].parse::<usize>().unwrap(), uniform.result.n_hat);

    // image dumps
    let img = std::fs::read(cfg.output.join(format!("images/snr2/slice{}_truth.pgm", tests[0]))).unwrap();
    assert!(img.starts_with(b"P5\n16 16\n65535\n"));
    assert_eq!(img.len(), b"P5\n16 16\n65535\n".len() + 2 * 16 * 16);
    for panel in ["zero-filled_baseline", "apodized_baseline", "apodized_uniform", "apodized_nonuniform"] {
        assert!(cfg.output.join(format!("images/snr2/slice{}_{panel}.pgm", tests[0])).exists(), "{panel}");
    }

    let table = std::fs::read_to_string(cfg.output.join("summary.txt")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["SNR", "method", "mode", "N", "NRMSE", "mean±std", "SSIM", "mean±std"]);
    assert_eq!(table.lines().count(), 1 + 2 * 4);
}

#[test]
fn sweep_resumes_from_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(&tmp.path().join("out"));
    commands::sweep(&cfg).unwrap();
    let first = files(&cfg.output);

    // mark both apodized SNR 10 results; drop one of them from the state file
    let keep = result_path(&cfg, 10.0, Method::Apodized, Mode::Uniform);
    let redo = result_path(&cfg, 10.0, Method::Apodized, Mode::Nonuniform);
    for p in [&keep, &redo] {
        let mut t = std::fs::read_to_string(p).unwrap();
        t.push_str("# marker\n");
        std::fs::write(p, t).unwrap();
    }
    let state = std::fs::read_to_string(state_path(&cfg)).unwrap();
    let dropped: String = state
        .lines()
        .filter(|l| !l.contains("snr=10 method=apodized mode=nonuniform"))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_ne!(dropped, state);
    std::fs::write(state_path(&cfg), dropped).unwrap();

    commands::sweep(&cfg).unwrap();
    assert!(std::fs::read_to_string(&keep).unwrap().ends_with("# marker\n"), "completed cell was rerun");
    assert!(!std::fs::read_to_string(&redo).unwrap().contains("# marker"), "missing cell was not rerun");
    let second = files(&cfg.output);
    for (k, v) in &first {
        if k.extension().is_some_and(|e| e == "csv") {
            assert_eq!(second.get(k), Some(v), "{} changed on resume", k.display());
        }
    }

    // a different config starts over
    let mut other = cfg.clone();
    other.eval_draws = 1;
    commands::sweep(&other).unwrap();
    assert!(!std::fs::read_to_string(&keep).unwrap().contains("# marker"));
}

#[test]
fn evaluate_rejects_foreign_results() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&tmp.path().join("out"));
    cfg.snr = vec![2.0];
    assert!(matches!(commands::design(&cfg), Err(CliError::Io { .. })), "design needs a dataset");
    commands::generate(&cfg).unwrap();
    assert!(matches!(commands::evaluate(&cfg), Err(CliError::MissingResult(_))));
    commands::design(&cfg).unwrap();
    commands::evaluate(&cfg).unwrap();
    let mut regenerated = cfg.clone();
    regenerated.dataset.seed += 1;
    commands::generate(&regenerated).unwrap();
    assert!(matches!(commands::evaluate(&cfg), Err(CliError::DatasetMismatch { .. })));
}

#[test]
fn binary_reports_machine_readable_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let exe = env!("CARGO_BIN_EXE_kdesign");
    let out = Command::new(exe).args(["design", "--config"]).arg(tmp.path().join("missing.conf")).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.lines().any(|l| l.starts_with("error kind=io message=\"")), "{err}");

    let conf = tmp.path().join("bad.conf");
    std::fs::write(&conf, "[dataset]\ntrain = 0\n").unwrap();
    let out = Command::new(exe).args(["generate", "--config"]).arg(&conf).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("error kind=invalid-config"));

    // --dump-config output re-parses to the same config, seed override included
    let out = Command::new(exe).args(["sweep", "--dump-config", "--seed", "77"]).output().unwrap();
    assert!(out.status.success());
    let expect = ExperimentConfig { seed: 77, ..Default::default() };
    assert_eq!(ExperimentConfig::parse(&String::from_utf8(out.stdout).unwrap()).unwrap(), expect);
}
