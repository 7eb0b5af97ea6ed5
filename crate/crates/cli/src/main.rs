//! `deh`: verification suite, dataset generation, training and evaluation
//! for equivariant hypersphere models.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use deh_core::train::Precision;

use crate::error::{CliError, EXIT_USAGE};
use crate::manifest::{git_describe, sha256_hex, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "deh", version, about = "Equivariant hypersphere networks")]
pub struct Cli {
    /// Worker threads for trials and batch items.
    #[arg(long, global = true, env = "DEH_THREADS")]
    pub threads: Option<usize>,

    /// Single thread, fixed-order reductions.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Where to write the run manifest (defaults next to the main output).
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the numerical identity and equivariance suite.
    Verify(VerifyArgs),
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train a model from a TOML config.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally under random O(n) transforms.
    Eval(EvalArgs),
    /// Train one model per training-set size.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Dimensions to test, `lo..hi` (inclusive) or a single value.
    #[arg(long, default_value = "2..8")]
    pub n_range: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write `verify.csv` and `verify.txt` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Perturb every change-of-basis matrix by this amount (suite self-test).
    #[arg(long, hide = true)]
    pub inject_fault: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "o5reg")]
    pub task: String,
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Clone)]
pub struct TrainOverrides {
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `train.precision`.
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Overrides `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides `train.train_size`.
    #[arg(long)]
    pub train_size: Option<usize>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate (not needed with --sweep-dir).
    #[arg(long, required_unless_present = "sweep_dir")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also evaluate with each sample hit by a random O(n) element drawn
    /// from this seed.
    #[arg(long, value_name = "SEED")]
    pub random_transforms: Option<u64>,
    #[arg(long, default_value = "f64")]
    pub precision: Precision,
    /// Append results to this CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluate every `size-*/checkpoint.bin` below this directory and emit a
    /// training-set-size vs loss CSV.
    #[arg(long)]
    pub sweep_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated training-set sizes.
    #[arg(long, value_delimiter = ',', default_value = "100,300,1000,3000")]
    pub sizes: Vec<usize>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

/// Threading decided from `--threads` and `--deterministic`.
#[derive(Clone, Copy, Debug)]
pub struct Ctx {
    pub parallel: bool,
}

fn setup_threads(cli: &Cli) -> Result<Ctx, CliError> {
    let threads = if cli.deterministic {
        if cli.threads.is_some_and(|t| t != 1) {
            log::warn!("--deterministic forces a single thread; ignoring --threads");
        }
        Some(1)
    } else {
        cli.threads
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(Ctx {
        parallel: !cli.deterministic && threads != Some(1),
    })
}

fn manifest_target(cli: &Cli) -> Option<PathBuf> {
    if let Some(p) = &cli.manifest {
        return Some(p.clone());
    }
    let sidecar = |p: &PathBuf| {
        let mut s = p.clone().into_os_string();
        s.push(".manifest.json");
        PathBuf::from(s)
    };
    match &cli.command {
        Command::Verify(a) => a.out_dir.as_ref().map(|d| d.join("manifest.json")),
        Command::GenData(a) => Some(sidecar(&a.out)),
        Command::Train(a) => Some(a.out_dir.join("manifest.json")),
        Command::Sweep(a) => Some(a.out_dir.join("manifest.json")),
        Command::Eval(a) => a
            .out
            .as_ref()
            .map(sidecar)
            .or_else(|| a.sweep_dir.as_ref().map(|d| d.join("eval.manifest.json"))),
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Verify(_) => "verify",
        Command::GenData(_) => "gen-data",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Sweep(_) => "sweep",
    }
}

fn config_hash(cli: &Cli, args: &[String]) -> String {
    let config = match &cli.command {
        Command::Train(a) => Some(&a.config),
        Command::Sweep(a) => Some(&a.config),
        _ => None,
    };
    match config.and_then(|p| std::fs::read(p).ok()) {
        Some(bytes) => sha256_hex(&bytes),
        None => sha256_hex(args.join("\u{1f}").as_bytes()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let start = Instant::now();
    let result = setup_threads(&cli).and_then(|ctx| commands::run(&cli, ctx));
    let (code, info) = match result {
        Ok(info) => (0, info),
        Err(e) => {
            eprintln!("error: {e}");
            (e.exit_code(), commands::RunInfo::default())
        }
    };

    let manifest = RunManifest {
        command: command_name(&cli.command).into(),
        args: args[1..].to_vec(),
        config_hash: config_hash(&cli, &args),
        seed: info.seed,
        precision: info.precision.map(|p| p.to_string()),
        git_describe: git_describe(),
        version: env!("CARGO_PKG_VERSION"),
        wall_clock_ms: start.elapsed().as_millis(),
        exit_code: code,
    };
    let written = manifest_target(&cli)
        .filter(|p| p.parent().map_or(true, |d| d.as_os_str().is_empty() || d.is_dir()))
        .map(|p| manifest.write(&p));
    match written {
        Some(Ok(())) => {}
        Some(Err(e)) => {
            log::warn!("could not write manifest: {e}");
            eprintln!("manifest: {}", serde_json::to_string(&manifest).unwrap_or_default());
        }
        None => eprintln!("manifest: {}", serde_json::to_string(&manifest).unwrap_or_default()),
    }
    ExitCode::from(code as u8)
}
