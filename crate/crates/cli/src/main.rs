//! `monocnn`: train, package, serve and evaluate seed-filter CNNs.
//!
//! Machine-readable output is one JSON object per line on stdout. Errors are
//! a single JSON line on stderr, `{"error": code, "message": text}`, with
//! exit status 2 for usage errors and 1 otherwise.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use monocnn_core::data::DatasetKind;
use monocnn_core::model::{Arch, FgfTemplate};
use monocnn_core::train::{LossConfig, TrainConfig};
use monocnn_core::FgfKind;

#[derive(Parser, Debug)]
#[command(name = "monocnn", version, about = "Train, package, serve and evaluate seed-filter CNNs")]
#[command(args_override_self = true)]
pub struct Cli {
    /// File of `key = value` lines supplying flag values. Keys are long flag
    /// names; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Write the MONO1 packet of a checkpoint.
    Export(ExportArgs),
    /// Serve a directory of MONO1 packets over TCP.
    Serve(ServeArgs),
    /// Fetch and verify a packet from a server.
    Fetch(FetchArgs),
    /// Top-1 accuracy on the test split, optionally under corruption.
    Eval(EvalArgs),
    /// Sweep FGF kind, exponent range or number of terms.
    Ablate(AblateArgs),
    /// Packet sizes and parameter counts.
    SizeReport(SizeReportArgs),
    /// Compare analytic gradients with central differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long, default_value = "mnist", value_parser = parse_dataset)]
    pub dataset: DatasetKind,
    /// Root holding `mnist/` or `cifar-10-batches-bin/`.
    #[arg(long, env = "MONOCNN_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
    /// Use only the first N training images.
    #[arg(long, value_name = "N")]
    pub train_limit: Option<usize>,
    /// Use only the first N test images.
    #[arg(long, value_name = "N")]
    pub test_limit: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct FgfArgs {
    #[arg(long, default_value = "monomial", value_parser = parse_fgf)]
    pub fgf: FgfKind,
    #[arg(long, default_value_t = 1.0)]
    pub beta_lower: f32,
    #[arg(long, default_value_t = 7.0)]
    pub beta_upper: f32,
    /// Polynomial terms averaged per generated filter.
    #[arg(long, default_value_t = 1)]
    pub terms: usize,
}

impl FgfArgs {
    pub fn template(&self) -> FgfTemplate {
        FgfTemplate {
            kind: self.fgf,
            beta_lower: self.beta_lower,
            beta_upper: self.beta_upper,
            terms: self.terms,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Initial learning rate of the cosine schedule.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f32,
    /// Pad-4 random crop and horizontal flip.
    #[arg(long)]
    pub augment: bool,
}

impl OptimArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr0: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            momentum: self.momentum,
            seed,
            augment: self.augment,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct LossArgs {
    /// Weight of the stagewise feature-matching term (teacher only).
    #[arg(long, default_value_t = 1.0)]
    pub w_mse: f32,
    #[arg(long, default_value_t = 1.0)]
    pub w_hard: f32,
    /// Weight of the softened-teacher term (teacher only).
    #[arg(long, default_value_t = 1.0)]
    pub w_distill: f32,
    #[arg(long, default_value_t = 4.0)]
    pub temperature: f32,
    /// Weight decay coefficient.
    #[arg(long, default_value_t = 5e-4)]
    pub l2: f32,
}

impl LossArgs {
    pub fn config(&self) -> LossConfig {
        LossConfig {
            w_mse: self.w_mse,
            w_hard: self.w_hard,
            w_distill: self.w_distill,
            temperature: self.temperature,
            l2: self.l2,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value = "mono-tiny", value_parser = parse_arch)]
    pub arch: Arch,
    /// Drives exponents, initialization, sample order and augmentation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Checkpoint or packet of a frozen teacher.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also write the checkpoint as it was before the first step.
    #[arg(long, value_name = "PATH")]
    pub save_initial: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fgf: FgfArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub loss: LossArgs,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Checkpoint to export.
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the materialized twin (every filter stored) instead.
    #[arg(long)]
    pub full: bool,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub bind: String,
    /// Directory of `<name>.mono1` / `<name>-v<N>.mono1` packets.
    #[arg(long)]
    pub model_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct FetchArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub addr: String,
    #[arg(long)]
    pub model: String,
    /// Required version; latest when omitted.
    #[arg(long)]
    pub version: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint or MONO1 packet.
    #[arg(long)]
    pub model: PathBuf,
    /// `kind:severity` (e.g. `gaussian:3`) or `all` for the full table.
    #[arg(long)]
    pub corrupt: Option<String>,
    /// Seed of the corruption noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// One JSON record per line instead of text.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Sweep FGF kinds: `all` or a comma-separated list.
    #[arg(long, value_name = "KINDS")]
    pub fgf: Option<String>,
    /// Sweep the built-in exponent-range grid.
    #[arg(long)]
    pub beta_grid: bool,
    /// Sweep term counts: a list (`1,2,4`), a range (`1-6`) or `all`.
    #[arg(long, value_name = "COUNTS")]
    pub terms: Option<String>,
    /// First seed; run r uses `seed + r`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeds per configuration.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub loss: LossArgs,
}

#[derive(Args, Debug)]
pub struct SizeReportArgs {
    /// Report on this packet or checkpoint instead of a reference model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "mono-tiny", value_parser = parse_arch)]
    pub arch: Arch,
    /// Input shape `C,H,W` of the reference model.
    #[arg(long, default_value = "1,28,28", value_parser = parse_shape)]
    pub input_shape: [usize; 3],
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub fgf: FgfArgs,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long, default_value = "mono-tiny", value_parser = parse_arch)]
    pub arch: Arch,
    /// Picks the model, the probed coordinates and the test images.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test images per check.
    #[arg(long, default_value_t = 2)]
    pub samples: usize,
    /// Use standard-normal inputs instead of dataset images.
    #[arg(long)]
    pub synthetic: bool,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fgf: FgfArgs,
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e: monocnn_core::Error| e.to_string())
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    s.parse().map_err(|e: monocnn_core::Error| e.to_string())
}

fn parse_fgf(s: &str) -> Result<FgfKind, String> {
    s.parse().map_err(|e: monocnn_core::Error| e.to_string())
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| d.trim().parse().map_err(|_| format!("bad dimension {d:?}")))
        .collect::<Result<_, _>>()?;
    dims.try_into().map_err(|_| format!("expected C,H,W, got {s:?}"))
}

/// Error surfaced to the user as one JSON line.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(monocnn_core::Error),
    Io { path: PathBuf, source: std::io::Error },
    CheckFailed(String),
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "io",
            CliError::CheckFailed(_) => "check-failed",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::CheckFailed(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
            CliError::Io { path, source } => format!("{}: {source}", path.display()),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl From<monocnn_core::Error> for CliError {
    fn from(e: monocnn_core::Error) -> Self {
        CliError::Core(e)
    }
}

fn report(err: &CliError) -> ExitCode {
    let message = err.message().split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("{}", serde_json::json!({ "error": err.code(), "message": message }));
    ExitCode::from(err.exit_code())
}

fn parse(raw: Vec<OsString>) -> Result<Cli, Result<(), CliError>> {
    let args = config::expand(raw, &Cli::command()).map_err(Err)?;
    Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp
        | clap::error::ErrorKind::DisplayVersion
        | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            if e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                Err(CliError::Usage("missing subcommand".into()))
            } else {
                Ok(())
            }
        }
        _ => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            Err(CliError::Usage(first.trim_start_matches("error: ").to_string()))
        }
    })
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(Ok(())) => return ExitCode::SUCCESS,
        Err(Err(e)) => return report(&e),
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
