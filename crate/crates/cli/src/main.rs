#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod cli;
mod commands;
mod manifest;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::Parser;

use cli::{Cli, Command};
use commands::{execute, Status};
use manifest::RunManifest;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_INVARIANT: u8 = 4;
const EXIT_INCONCLUSIVE: u8 = 5;

fn exit_code(e: &anyhow::Error) -> u8 {
    use mfc_core::Error::*;
    match e.downcast_ref::<mfc_core::Error>() {
        Some(
            Singular { .. }
            | Divergence { .. }
            | Definiteness { .. }
            | DegenerateMap { .. }
            | Moments(_)
            | Integration(_),
        ) => EXIT_NUMERICAL,
        Some(InvariantViolation(_)) => EXIT_INVARIANT,
        Some(Fit { .. } | Inconclusive(_)) => EXIT_INCONCLUSIVE,
        _ => EXIT_CONFIG,
    }
}

fn status_code(s: &Status) -> u8 {
    match s {
        Status::Ok => 0,
        Status::Invariant(_) => EXIT_INVARIANT,
        Status::Inconclusive(_) => EXIT_INCONCLUSIVE,
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let (command, model_path, model_toml) = match cli.command {
        Command::Rerun(a) => {
            let m = RunManifest::read(&a.manifest)?;
            log::info!("rerunning `{}` from {}", m.run.name(), a.manifest.display());
            (m.run, m.model_path, m.model_toml)
        }
        cmd => {
            let path = cmd
                .model_args()
                .expect("every run command takes a model")
                .model
                .clone();
            let text = std::fs::read_to_string(&path)
                .map_err(|e| mfc_core::Error::Io(format!("{}: {e}", path.display())))?;
            (cmd, path, text)
        }
    };
    let started = Instant::now();
    let outcome = execute(&command, &model_toml, &cli.out_dir)?;
    let code = status_code(&outcome.status);
    let seed = match &command {
        Command::Simulate(a) => Some(a.seed),
        Command::Convergence(a) => Some(a.seed),
        Command::Improve(a) => Some(a.seed),
        _ => None,
    };
    RunManifest {
        version: manifest::version(),
        run: command,
        model_path,
        model_toml,
        seed,
        out_dir: cli.out_dir.clone(),
        outputs: outcome.outputs,
        threads: cli.threads,
        exit_code: code.into(),
        duration_secs: started.elapsed().as_secs_f64(),
    }
    .write(&cli.out_dir)?;
    match &outcome.status {
        Status::Ok => {}
        Status::Invariant(m) | Status::Inconclusive(m) => eprintln!("mfc: {m}"),
    }
    println!("artifacts written to {}", display(&cli.out_dir));
    Ok(code)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("mfc: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
