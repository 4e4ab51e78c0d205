mod args;
mod commands;
mod manifest;
mod svg;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use manifest::RunManifest;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const USER_ERROR: u8 = 1;
const INTERNAL_ERROR: u8 = 2;

fn execute(command: Command) -> Result<()> {
    let command = match command {
        Command::Replay(r) => {
            let m = RunManifest::load(&r.manifest)?;
            let mut cmd = m.command;
            if let Some(out) = r.out {
                if let Some(slot) = cmd.out_mut() {
                    *slot = out;
                }
            }
            if let (Some(j), Some(slot)) = (r.jobs, cmd.jobs_mut()) {
                *slot = j;
            }
            cmd
        }
        c => c,
    };
    let start = Instant::now();
    let outcome = match &command {
        Command::GenBench(a) => commands::gen_bench(a)?,
        Command::ImportBench(a) => commands::import_bench(a)?,
        Command::Rank(a) => commands::rank(a)?,
        Command::TaskSearch(a) => commands::task_search(a)?,
        Command::NasSearch(a) => commands::nas(a)?,
        Command::Signals(a) => commands::signals(a)?,
        Command::EvalArch(a) => commands::eval_arch(a)?,
        Command::RnnRank(a) => commands::rnn_rank(a)?,
        Command::Replay(_) => bail!("a manifest cannot record a replay"),
    };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        config: outcome.config,
        seed: outcome.seed,
        outputs: outcome.outputs,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    manifest.save(&outcome.manifest)?;
    eprintln!("manifest written to {}", outcome.manifest.display());
    Ok(())
}

/// Bad input is a user error; failures inside the library are internal.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<regnas::Error>() {
            return if e.is_user_error() { USER_ERROR } else { INTERNAL_ERROR };
        }
    }
    USER_ERROR
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(USER_ERROR),
            };
        }
    };
    match panic::catch_unwind(AssertUnwindSafe(|| execute(cli.command))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(INTERNAL_ERROR),
    }
}
