mod args;
mod commands;
mod config;
mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::Parser;
use serde::Serialize;

use args::{Cli, Command};
use error::{invalid, ErrorRecord};

#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    command: &'a str,
    version: &'a str,
    args: &'a A,
    threads: usize,
    outputs: &'a [PathBuf],
    created_unix: u64,
}

fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_manifest<A: Serialize>(command: &str, args: &A, outputs: &[PathBuf]) -> Result<()> {
    let Some(primary) = outputs.first() else {
        return Ok(());
    };
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        args,
        threads: rayon::current_num_threads(),
        outputs,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    let path = manifest_path(primary);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing manifest '{}'", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let name = cli.command.name();
    match &cli.command {
        Command::Synth(a) => write_manifest(name, a, &commands::synth(a)?),
        Command::Train(a) => write_manifest(name, a, &commands::train_cmd(a)?),
        Command::Binarize(a) => write_manifest(name, a, &commands::binarize(a)?),
        Command::Calibrate(a) => write_manifest(name, a, &commands::calibrate(a)?),
        Command::Convert(a) => write_manifest(name, a, &commands::convert(a)?),
        Command::Infer(a) => write_manifest(name, a, &commands::infer(a)?),
        Command::Sweep(a) => write_manifest(name, a, &commands::sweep(a)?),
        Command::Report(a) => write_manifest(name, a, &commands::report(a)?),
    }
}

fn fail(err: &anyhow::Error) -> ExitCode {
    let record = ErrorRecord::from_error(err);
    eprintln!("{}", serde_json::json!({ "error": record }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let raw: Vec<OsString> = std::env::args_os().collect();
    let argv = match config::merge_config(raw) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = ErrorRecord {
                kind: "invalid-argument",
                message: e.render().to_string().trim().to_string(),
            };
            eprintln!("{}", serde_json::json!({ "error": record }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
