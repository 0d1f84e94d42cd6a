mod args;
mod commands;
mod doc;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use iris_core::format::FormatError;
use iris_core::fuzzer::FuzzError;
use iris_core::recorder::{deserialize_trace, TraceFile};
use iris_core::replayer::ReplayError;

use args::{Cli, Command};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INVALID: u8 = 3;
pub const EXIT_VM_CRASH: u8 = 4;
pub const EXIT_HYP_CRASH: u8 = 5;

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Global options every command sees.
pub struct Ctx {
    pub rng_seed: Option<u64>,
    pub quiet: bool,
    pub json: bool,
    pub out_dir: PathBuf,
}

impl Ctx {
    pub fn output_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() || self.out_dir == Path::new(".") {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    /// Human-readable output, unless --quiet or --json.
    pub fn say(&self, text: impl fmt::Display) {
        if !self.quiet && !self.json {
            println!("{text}");
        }
    }

    pub fn emit_json<T: serde::Serialize>(&self, value: &T) -> Result<()> {
        if self.json {
            println!("{}", serde_json::to_string_pretty(value)?);
        }
        Ok(())
    }
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    deserialize_trace(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn status_of(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<FormatError>() || cause.is::<ReplayError>() {
            return EXIT_INVALID;
        }
        if let Some(e) = cause.downcast_ref::<FuzzError>() {
            return match e {
                FuzzError::MutantAborted(_) => EXIT_FAILURE,
                _ => EXIT_INVALID,
            };
        }
    }
    EXIT_FAILURE
}

fn run(cli: Cli) -> Result<u8> {
    let ctx = Ctx { rng_seed: cli.rng_seed, quiet: cli.quiet, json: cli.json, out_dir: cli.out_dir };
    match cli.command {
        Command::Record(a) => commands::record(&ctx, a),
        Command::Replay(a) => commands::replay(&ctx, a),
        Command::Fuzz(a) => commands::fuzz(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
        Command::GenWorkload(a) => commands::gen_workload(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(status_of(&e))
        }
    }
}
