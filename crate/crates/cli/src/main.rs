// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kdesign_cli::{commands, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "kdesign", version, about = "k-space coverage and averaging design experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config; built-in desk-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the effective config and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset and its manifest.
    Generate(Common),
    /// Run the gridsize search for every SNR × method × mode cell.
    Design(Common),
    /// Evaluate baseline and optimised designs on the test slices.
    Evaluate(Common),
    /// generate, design and evaluate with a resumable state file.
    Sweep(Common),
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, which) = match &cli.command {
        Command::Generate(c) => (c, "generate"),
        Command::Design(c) => (c, "design"),
        Command::Evaluate(c) => (c, "evaluate"),
        Command::Sweep(c) => (c, "sweep"),
    };
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.dump_config {
        print!("{}", cfg.render()?);
        return Ok(());
    }
    match which {
        "generate" => println!("{}", commands::generate(&cfg)?),
        "design" => {
            for rec in commands::design(&cfg)? {
                let r = &rec.result;
                println!("SNR {} {} {}: N = {}", rec.snr, r.method, r.mode, r.n_hat);
            }
        }
        "evaluate" => {
            let e = commands::evaluate(&cfg)?;
            print!("{}", kdesign_cli::report::summary_table(&e.summary));
        }
        _ => print!("{}", commands::sweep(&cfg)?.table),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"");
            eprintln!("error kind={} message=\"{msg}\"", e.kind());
            ExitCode::FAILURE
        }
    }
}
