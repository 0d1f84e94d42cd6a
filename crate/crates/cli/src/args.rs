use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iris_core::guest::Workload;

#[derive(Debug, Parser)]
#[command(name = "iris", version, about = "Record VM-exit traces, replay them, fuzz their seeds")]
pub struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true)]
    pub rng_seed: Option<u64>,
    /// Suppress human-readable output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Print machine-readable JSON on stdout instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Directory relative output paths are resolved against.
    #[arg(long, global = true, env = "IRIS_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a workload on a fresh vCPU and record its exits to a trace.
    Record(RecordArgs),
    /// Replay a trace on a dummy VM.
    Replay(ReplayArgs),
    /// Run single-bit-flip campaigns described by a config file.
    Fuzz(FuzzArgs),
    /// Render the JSON output of other commands as tables.
    Report(ReportArgs),
    /// Write a generated guest program, or the workload profile table.
    GenWorkload(GenArgs),
}

fn parse_workload(s: &str) -> Result<Workload, String> {
    s.parse().map_err(|e: iris_core::guest::UnknownWorkload| e.to_string())
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    /// OS_BOOT, CPU_BOUND, MEM_BOUND, IO_BOUND or IDLE.
    #[arg(value_parser = parse_workload, required_unless_present = "program")]
    pub workload: Option<Workload>,
    /// Number of exits to record.
    #[arg(default_value_t = 5000)]
    pub n_exits: usize,
    /// Record a program written by gen-workload instead of generating one.
    #[arg(long, conflicts_with = "workload")]
    pub program: Option<PathBuf>,
    /// Trace path; defaults to <workload>.iris.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Also save the session state after the last exit.
    #[arg(long)]
    pub save_snapshot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub trace: PathBuf,
    /// Start from a saved session instead of a fresh dummy VM.
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Collect metrics while replaying and compare them with the recorded ones.
    #[arg(long)]
    pub with_metrics: bool,
    /// Write the replay report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Save the session state after the last replayed exit.
    #[arg(long)]
    pub save_snapshot: Option<PathBuf>,
    /// Write the trace with its replayed metrics (needs --with-metrics).
    #[arg(long, requires = "with_metrics")]
    pub save_metrics: Option<PathBuf>,
    /// Serve reads the seed does not cover from the live VMCS.
    #[arg(long)]
    pub live_reads: bool,
    /// Probability of adding asynchronous-event blocks to each recorded exit
    /// before the comparison.
    #[arg(long, requires = "with_metrics", value_parser = parse_probability)]
    pub noise: Option<f64>,
    /// Diffs up to this many blocks count as noise.
    #[arg(long, default_value_t = iris_core::replayer::DEFAULT_NOISE_THRESHOLD)]
    pub noise_threshold: usize,
}

fn parse_probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is not a probability"))
    }
}

#[derive(Debug, Args)]
pub struct FuzzArgs {
    /// Campaign config (TOML).
    pub config: PathBuf,
    /// Where campaign JSON and crash artifacts go; defaults to --out-dir.
    #[arg(value_name = "OUT_DIR")]
    pub dest: Option<PathBuf>,
    /// Override the mutant count of every campaign.
    #[arg(long)]
    pub mutants: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON documents written by other commands, or recorded/replayed `.iris` pairs.
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Diffs up to this many blocks count as noise.
    #[arg(long, default_value_t = iris_core::replayer::DEFAULT_NOISE_THRESHOLD)]
    pub noise_threshold: usize,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(value_parser = parse_workload, required_unless_present = "profiles")]
    pub workload: Option<Workload>,
    #[arg(default_value_t = 5000)]
    pub n_exits: usize,
    /// Program path; defaults to <workload>.irpg.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Print the workload profile table as CSV instead.
    #[arg(long, conflicts_with = "workload")]
    pub profiles: bool,
}
