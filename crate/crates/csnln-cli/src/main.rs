//! `csnln`: train, run and interrogate the cross-scale non-local
//! super-resolution network from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 verification
//! failure (a gradient or oracle check that ran fine but did not pass).

mod cmd;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

/// A classified failure; the variant decides the process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Verification(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) | Failure::Verification(m) => m,
        }
    }
}

impl From<csnln::Error> for Failure {
    fn from(e: csnln::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(
    name = "csnln",
    version,
    term_width = 100,
    about = "Cross-scale non-local attention super-resolution",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    /// Seed for all random draws; overrides the config seed when set [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a config file
    Train(TrainArgs),
    /// Super-resolve a PNG with a trained checkpoint
    Infer(InferArgs),
    /// Evaluate a checkpoint against a directory of HR PNGs
    Eval(EvalArgs),
    /// Finite-difference checks for every differentiable op and the full network
    Gradcheck(GradcheckArgs),
    /// Compare fast attention paths against brute-force oracles
    Oracle(OracleArgs),
    /// Render the cross-scale attention weights of one query as a heatmap PNG
    Attnmap(AttnmapArgs),
    /// Report trainable parameter counts per module
    Params(ParamsArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Path to a key=value config file
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to resume from; must match the config's architecture
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
pub struct InferArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Low-resolution input PNG
    #[arg(long)]
    input: PathBuf,
    /// Upscaling factor; must match the checkpoint
    #[arg(long)]
    scale: usize,
    /// Where to write the super-resolved PNG
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory of high-resolution ground-truth PNGs
    #[arg(long)]
    hr_dir: PathBuf,
    /// Downscale factor used to synthesize the LR inputs
    #[arg(long)]
    scale: usize,
    /// Border pixels excluded from PSNR [default: the scale]
    #[arg(long)]
    border_crop: Option<usize>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Network preset to check end to end
    #[arg(long, default_value = "toy", value_parser = ["toy"])]
    preset: String,
}

#[derive(Args)]
pub struct OracleArgs {
    /// Number of random cases per comparison
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

#[derive(Args)]
pub struct AttnmapArgs {
    /// Optional checkpoint; when given, attention runs on head features with
    /// the model's learned embeddings instead of raw pixels
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Input PNG
    #[arg(long)]
    input: PathBuf,
    /// Query pixel as row,col in input coordinates
    #[arg(long)]
    query: String,
    /// Cross-scale factor (ignored with --ckpt, which carries its own)
    #[arg(long, default_value_t = 2)]
    scale: usize,
    /// Correlation window size in downscaled coordinates, odd (ignored with --ckpt)
    #[arg(long, default_value_t = 3)]
    patch: usize,
    /// Where to write the heatmap PNG
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct ParamsArgs {
    /// Model preset
    #[arg(long, default_value = "toy", value_parser = ["toy", "paper"])]
    preset: String,
    /// Super-resolution scale
    #[arg(long, default_value_t = 2)]
    scale: usize,
    /// Drop the cross-scale attention branch
    #[arg(long)]
    no_csnl: bool,
    /// Drop the in-scale attention branch
    #[arg(long)]
    no_isnl: bool,
    /// Drop the local (identity projection) branch
    #[arg(long)]
    no_local: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 2 on bad flags by default; this tool reserves 2 for
            // runtime failures, so usage problems are remapped to 1.
            let code: u8 = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let seed = cli.seed;
    let outcome = match cli.cmd {
        Cmd::Train(a) => cmd::train(a, seed),
        Cmd::Infer(a) => cmd::infer(a, seed),
        Cmd::Eval(a) => cmd::eval(a, seed),
        Cmd::Gradcheck(a) => cmd::gradcheck(a, seed),
        Cmd::Oracle(a) => cmd::oracle(a, seed),
        Cmd::Attnmap(a) => cmd::attnmap(a, seed),
        Cmd::Params(a) => cmd::params(a, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
