//! `fdnopt`: design, optimize, render and analyze feedback delay networks.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fdnopt::MatrixKind;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "FDNOPT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "fdnopt", version, about = "Colorless feedback delay network design and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Design delay lengths and write a seeded initial configuration.
    Design(DesignArgs),
    /// Train gains and feedback matrix on the frequency grid.
    Optimize(OptimizeArgs),
    /// Render an impulse response to WAV.
    Render(RenderArgs),
    /// Modal, echo-density, spectral and decay reports.
    Analyze(AnalyzeArgs),
    /// Run a bundled multi-seed experiment recipe.
    Repro(ReproArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Matrix {
    Orthogonal,
    Householder,
    Scattering,
}

impl From<Matrix> for MatrixKind {
    fn from(m: Matrix) -> Self {
        match m {
            Matrix::Orthogonal => MatrixKind::Orthogonal,
            Matrix::Householder => MatrixKind::Householder,
            Matrix::Scattering => MatrixKind::Scattering,
        }
    }
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    /// Number of delay lines.
    #[arg(long)]
    pub n: usize,
    /// Delay range in samples, `LOW:HIGH`.
    #[arg(long)]
    pub range: String,
    /// Smallest acceptable system order (sum of delays).
    #[arg(long, default_value_t = 0)]
    pub min_order: usize,
    #[arg(long, value_enum, default_value_t = Matrix::Orthogonal)]
    pub matrix: Matrix,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Gain per sample stored in the config.
    #[arg(long, conflicts_with = "t60")]
    pub gamma: Option<f64>,
    /// Broadband T60 in seconds (`inf` for lossless).
    #[arg(long)]
    pub t60: Option<f64>,
    #[arg(long, default_value_t = 48_000)]
    pub sample_rate: u32,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    /// FDN config, training config or earlier report (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Batch-sampling seed; with `--matrix` also the initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sparsity weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Training gain per sample.
    #[arg(long, conflicts_with = "t60")]
    pub gamma: Option<f64>,
    /// Training T60 in seconds.
    #[arg(long)]
    pub t60: Option<f64>,
    /// Redraw initial parameters for this matrix type.
    #[arg(long, value_enum)]
    pub matrix: Option<Matrix>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// FDN config, training config or report (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Broadband T60 in seconds; `inf` renders the lossless system.
    #[arg(long, conflicts_with = "gamma")]
    pub t60: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Per-line attenuation filters from `--spec`.
    #[arg(long, conflicts_with_all = ["t60", "gamma"])]
    pub freq_dependent: bool,
    /// Attenuation spec (JSON) for `--freq-dependent`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Length in seconds.
    #[arg(long, default_value_t = 2.0)]
    pub length: f64,
    /// Overrides the config's sample rate.
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["config", "wav"])))]
pub struct AnalyzeArgs {
    /// FDN config, training config or report (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Impulse response to analyze.
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// Skip the modal decomposition.
    #[arg(long)]
    pub no_modal: bool,
    /// Operation-count label (RO, DiffFDN-O, DiffFDN-HH, DiffFDN-SCAT, plain).
    #[arg(long)]
    pub fdn_type: Option<String>,
    /// Scattering stages for the operation count.
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    #[arg(long, default_value_t = 0.0)]
    pub f_lo: f64,
    /// Upper edge of the magnitude report; defaults to Nyquist.
    #[arg(long)]
    pub f_hi: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub resolution: f64,
    /// Rendered length for the echo-density profile, in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub render_seconds: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Args, Debug)]
pub struct ReproArgs {
    /// Recipe JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    /// Seed range `FIRST:END` (end exclusive); overrides the recipe.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Restrict to these network sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Bad flags or inputs detected by the front end.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use fdnopt::Error as E;
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<E>() {
        Some(
            E::Singular { .. }
            | E::DegenerateDirection { .. }
            | E::SingularDelay
            | E::Divergent(_)
            | E::NoConvergence { .. }
            | E::Multiplicity { .. }
            | E::EmptyDecomposition
            | E::Divergence { .. }
            | E::InsufficientDecay { .. }
            | E::UnstableFilter { .. },
        ) => 2,
        _ => 1,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| usage(format!("{THREADS_ENV} must be a thread count, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| usage(format!("cannot configure {threads} threads: {e}")))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Design(a) => commands::design(&a),
        Command::Optimize(a) => commands::optimize(&a),
        Command::Render(a) => commands::render(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Repro(a) => commands::repro(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
