//! `gfloam` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration error, 3 data error.

mod bench;
mod calibrate;
mod evaluate;
mod failure;
mod input;
mod run;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gfloam::config::SelectionMode;
use gfloam::synth::SceneKind;

#[derive(Debug, Parser)]
#[command(name = "gfloam", version, about = "Lidar scan-to-map odometry with good feature selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register a scan sequence and write trajectory and statistics.
    Run(RunArgs),
    /// Generate a synthetic scan sequence with ground truth.
    Synth(SynthArgs),
    /// Compare selectors on random PSD candidate sets.
    SelectBench(BenchArgs),
    /// Report the degeneracy factor of every frame of a sequence.
    DegeneracyCalibrate(CalibrateArgs),
    /// Compute ATE and RPE of an estimated trajectory.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scan directory (optionally with a `scans/` subdirectory) or manifest file.
    #[arg(long)]
    pub input: PathBuf,
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// gf, greedy, rnd or full; overrides `pipeline.mode`.
    #[arg(long)]
    pub mode: Option<SelectionMode>,
    #[arg(long)]
    pub output: PathBuf,
    /// Overrides `selector.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Leave wall-clock timings out of stats.jsonl and summary.json.
    #[arg(long)]
    pub no_latency: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// corridor, room or outdoor-ground.
    #[arg(long)]
    pub scene: SceneKind,
    #[arg(long)]
    pub frames: usize,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Range noise standard deviation (m).
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub outlier_rate: f64,
    /// Outlier range perturbation bound (m).
    #[arg(long, default_value_t = 1.0)]
    pub outlier_magnitude: f64,
    #[arg(long, default_value_t = 16)]
    pub rings: usize,
    #[arg(long, default_value_t = 10.0)]
    pub rate_hz: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Histogram bin count.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub rpe_delta: usize,
    /// se3 or se2 (yaw and planar translation only).
    #[arg(long, default_value = "se3")]
    pub align: String,
    /// Also write per-pair aligned positions as CSV.
    #[arg(long)]
    pub aligned_csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GF_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run::run(&args),
        Command::Synth(args) => synth::synth(&args),
        Command::SelectBench(args) => bench::bench(&args),
        Command::DegeneracyCalibrate(args) => calibrate::calibrate(&args),
        Command::Eval(args) => evaluate::evaluate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
