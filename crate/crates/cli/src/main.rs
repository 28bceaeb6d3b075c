//! `gats`: data generation, anchoring, primitive encode/decode, validation
//! and small-scale diffusion on top of `gats-core`.

mod commands;
mod manifest;
mod selfcheck;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gats_core::{Execution, GatsError};

#[derive(Debug, Parser)]
#[command(name = "gats", version, about = "Anchored low-rank tensor primitives")]
pub struct Cli {
    /// Worker threads (1 runs everything sequentially). Outputs do not
    /// depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Root seed; every random task derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    #[command(subcommand)]
    GenData(GenData),
    /// Select medoid anchors over a corpus.
    Anchor(AnchorArgs),
    /// Encode a corpus into a primitive archive.
    Encode(EncodeArgs),
    /// Decode a primitive archive back into a corpus.
    Decode(DecodeArgs),
    /// Reconstruction error of one corpus against another.
    Stats(StatsArgs),
    /// 2-d classical MDS of natural and aligned frames.
    Mds(MdsArgs),
    /// Monte Carlo check of the aligned-distance law.
    #[command(name = "validate-prop2")]
    ValidateProp2(Prop2Args),
    /// Scalar factorization toy for diffusion.
    ToyDiffusion(ToyArgs),
    /// Train a noise predictor on a primitive archive.
    Train(TrainArgs),
    /// Sample primitives from a trained model.
    Sample(SampleArgs),
    /// Run the fast invariant suite.
    Selfcheck,
}

#[derive(Debug, Subcommand)]
pub enum GenData {
    /// 1-d reaction-diffusion trajectories (nx × nt per sample).
    Rd1d(Rd1dArgs),
    /// Exact or noisy low-rank Tucker tensors.
    Lowrank(LowrankArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Rd1dArgs {
    /// Diffusion coefficients to draw from.
    #[arg(long, value_delimiter = ',')]
    pub nu: Vec<f64>,
    /// Reaction rates to draw from.
    #[arg(long, value_delimiter = ',')]
    pub rho: Vec<f64>,
    #[arg(long, default_value_t = 1024)]
    pub nx: usize,
    #[arg(long, default_value_t = 200)]
    pub nt: usize,
    #[arg(long, default_value_t = 1.0)]
    pub t_end: f64,
    /// Fixed time step (default: derived from the stability bound).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Sinusoids per initial condition.
    #[arg(long, default_value_t = 3)]
    pub n_modes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LowrankArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub ranks: Vec<usize>,
    #[arg(long, default_value_t = 0.8)]
    pub decay: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveType {
    Mgp,
    Tgp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorSourceArg {
    GramEigen,
    Hooi,
}

/// Primitive layout flags shared by anchor / encode / mds.
#[derive(Debug, Args, Serialize)]
pub struct CodecArgs {
    #[arg(long = "type", value_enum, default_value = "mgp")]
    pub kind: PrimitiveType,
    /// MGP rank.
    #[arg(long)]
    pub rank: Option<usize>,
    /// MGP patch size, e.g. `32x20`.
    #[arg(long, value_parser = parse_patch)]
    pub patch: Option<(usize, usize)>,
    /// TGP aligned modes (1-based), e.g. `1,3`.
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<usize>,
    /// TGP ranks, one per aligned mode.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Vec<usize>,
    #[arg(long, value_enum, default_value = "gram-eigen")]
    pub factor_source: FactorSourceArg,
}

fn parse_patch(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

#[derive(Debug, Args, Serialize)]
pub struct AnchorArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub codec: CodecArgs,
    /// Approximate: score each frame against this many random frames
    /// instead of the whole corpus.
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub anchor: PathBuf,
    #[command(flatten)]
    pub codec: CodecArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// Reference corpus.
    #[arg(long)]
    pub reference: PathBuf,
    /// Reconstructed corpus.
    #[arg(long)]
    pub estimate: PathBuf,
    /// Time mode (1-based) for per-frame RMSE.
    #[arg(long)]
    pub time_mode: Option<usize>,
    /// Value range for PSNR.
    #[arg(long)]
    pub range: Option<f64>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MdsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub codec: CodecArgs,
    /// Anchor archive; adds the aligned frames to the embedding.
    #[arg(long)]
    pub anchor: Option<PathBuf>,
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct Prop2Args {
    #[arg(long, default_value_t = 400)]
    pub p: usize,
    #[arg(long, default_value_t = 100)]
    pub r: usize,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Allowed deviation of the mean from the asymptotic value.
    #[arg(long, default_value_t = 0.02)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LawArg {
    Anchored,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Args, Serialize)]
pub struct ToyArgs {
    #[arg(long, value_enum, default_value = "anchored")]
    pub law: LawArg,
    #[arg(long, default_value_t = 0.5)]
    pub a: f64,
    #[arg(long, default_value_t = 4.0)]
    pub b: f64,
    /// Training set size.
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 250)]
    pub ddim_steps: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_generate: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value = "sgd")]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    /// Ignore the archive's condition vectors.
    #[arg(long)]
    pub unconditional: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 250)]
    pub ddim_steps: usize,
    /// Condition vector shared by all samples (conditional models only).
    #[arg(long, value_delimiter = ',')]
    pub cond: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// A check the command ran did not pass (exit 1).
#[derive(Debug)]
pub struct ValidationFailed(pub String);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "validation failed: {}", self.0)
    }
}

impl std::error::Error for ValidationFailed {}

/// Bad flag values detected after parsing (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn execution(threads: Option<usize>) -> anyhow::Result<Execution> {
    match threads {
        Some(0) => Err(UsageError("--threads must be >= 1".into()).into()),
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            Ok(Execution::Parallel)
        }
        _ => Ok(Execution::default()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<GatsError>() {
        Some(
            GatsError::InvalidArgument(_)
            | GatsError::RankOutOfRange { .. }
            | GatsError::ModeOutOfRange { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command()
        .long_version(&*Box::leak(manifest::long_version().into_boxed_str()))
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = execution(cli.threads).and_then(|exec| commands::run(&cli, exec));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
