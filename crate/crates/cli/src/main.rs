//! `ctp` — reproducible experiments for tri-modal contrastive alignment.
//!
//! Subcommands: gen-data, train, eval, gradcheck, oracle-check, compare,
//! bench. Every command takes `--config FILE` and repeatable
//! `--set section.key=value` overrides, and echoes its fully-resolved
//! configuration into the output directory as `config.resolved`.
//!
//! Exit codes: 0 on success, 2 for validation errors (flags, config,
//! data), 3 when a verification command measures a tolerance violation.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_VALIDATION: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ctp",
    version,
    about = "Tri-modal contrastive alignment experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic triplet manifests and the class prototype table.
    GenData(GenDataArgs),
    /// Train encoders with a tensor or pairwise contrastive loss.
    Train(TrainArgs),
    /// Zero-shot classification of a test manifest against class prompts.
    Eval(EvalArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Verify the tensor loss against brute-force enumeration.
    OracleCheck(OracleCheckArgs),
    /// Train every loss variant over several seeds and tabulate accuracy.
    Compare(CompareArgs),
    /// Time the numeric kernels.
    Bench(BenchArgs),
}

/// Flags shared by every subcommand.
#[derive(Args, Clone)]
struct CommonArgs {
    /// Sectioned key-value config file.
    #[arg(long, global = false)]
    config: Option<PathBuf>,
    /// Override one config entry, e.g. --set dataset.classes=7.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker thread count; execution is currently single-threaded, and 1
    /// guarantees bit-for-bit reproducibility.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of classes.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    text_dim: Option<usize>,
    #[arg(long)]
    image_dim: Option<usize>,
    #[arg(long)]
    sigma_text: Option<f64>,
    #[arg(long)]
    sigma_image: Option<f64>,
    #[arg(long)]
    sigma_point: Option<f64>,
    #[arg(long)]
    points_min: Option<usize>,
    #[arg(long)]
    points_max: Option<usize>,
    /// Drop generated records with fewer than this many points (0 = off).
    #[arg(long)]
    min_points: Option<usize>,
    /// Training record count.
    #[arg(long)]
    train: Option<usize>,
    /// Test record count.
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory holding train.jsonl (from gen-data).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Explicit training manifest path; overrides --data.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Loss variant: ctp_mask, ctp_nm, ctp_cosine, pairwise.
    #[arg(long)]
    loss: Option<String>,
    /// Loss component weights as "a,b,c".
    #[arg(long)]
    coeffs: Option<String>,
    /// Preset profile: desk (default) or paper.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    warmup_ratio: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated encoders to freeze, e.g. "text,image".
    #[arg(long)]
    freeze: Option<String>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Plane-loss reduction: sum (default) or mean.
    #[arg(long)]
    reduction: Option<String>,
    /// Optional global-norm gradient clip.
    #[arg(long)]
    grad_clip: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding test.jsonl and prototypes.jsonl.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Explicit test manifest path; overrides --data.
    #[arg(long)]
    test_manifest: Option<PathBuf>,
    /// Explicit prototype table path; overrides --data.
    #[arg(long)]
    prototypes: Option<PathBuf>,
    /// T_I, T_P, T_IP, or all.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Batch size of the checked loss.
    #[arg(long)]
    b: Option<usize>,
    /// Embedding dimension of the checked loss.
    #[arg(long)]
    d: Option<usize>,
    /// Number of random feature-level fixtures.
    #[arg(long)]
    seeds: Option<u64>,
    /// Central-difference step.
    #[arg(long)]
    eps: Option<f64>,
    /// Tolerance on coordinates with measurable gradients.
    #[arg(long)]
    tol: Option<f64>,
    /// Tolerance backstop for noise-floor coordinates.
    #[arg(long)]
    backstop: Option<f64>,
    /// Harness self-test: flip the sign of one analytic gradient entry and
    /// require the check to fail.
    #[arg(long, default_value_t = false)]
    self_test_flip: bool,
}

#[derive(Args)]
struct OracleCheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated batch sizes.
    #[arg(long)]
    b: Option<String>,
    /// Random fixtures per (batch size, metric, strategy) combination.
    #[arg(long)]
    seeds: Option<u64>,
    /// Absolute agreement tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Logit scale applied to both paths.
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of seeds; each seed gets fresh data and fresh training.
    #[arg(long)]
    seeds: Option<u64>,
    /// Base seed for the sweep.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    n_points: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Batch size for the timed kernels.
    #[arg(long)]
    b: Option<usize>,
    /// Embedding dimension for the timed kernels.
    #[arg(long)]
    d: Option<usize>,
    /// Iterations per kernel.
    #[arg(long)]
    iters: Option<usize>,
}

/// Outcome of one command: success, or a failure class with a message.
enum CmdOutcome {
    Ok,
    CheckFailed(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::OracleCheck(args) => commands::oracle_check(args),
        Command::Compare(args) => commands::compare(args),
        Command::Bench(args) => commands::bench(args),
    };
    match result {
        Ok(CmdOutcome::Ok) => ExitCode::SUCCESS,
        Ok(CmdOutcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
