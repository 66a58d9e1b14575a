//! `tcnet` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error. Runtime errors are
//! reported as one JSON line on stderr: `{"error":"<kind>","message":"..."}`.

mod commands;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "tcnet", version, about = "Feature-anchor time-series classification toolkit")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, env = "TCNET_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Dump per-block anchors of a dataset as CSV.
    Extract(ExtractArgs),
    /// Train a TCNet classifier.
    Train(TrainArgs),
    /// Evaluate a trained TCNet checkpoint.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable operation.
    GradCheck(GradCheckArgs),
    /// Per-family anchor change under noise, rotation and shift.
    Sensitivity(SensitivityArgs),
    /// Anchor features plus a random forest.
    RfBaseline(RfArgs),
    /// Ridge probe from learned embeddings to anchor families.
    Probe(ProbeArgs),
    /// Self-supervised pretraining of the compact encoder.
    Pretrain(PretrainArgs),
    /// Frozen compact-encoder embeddings as CSV.
    FreezeEmbed(FreezeArgs),
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Window CSV recordings into a dataset.
    ImportCsv(ImportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Soft,
    Hard,
}

impl From<ModeArg> for tcnet::tsf::Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Soft => tcnet::tsf::Mode::Soft,
            ModeArg::Hard => tcnet::tsf::Mode::Hard,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub block: usize,
    /// Defaults to the block size.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Hard)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Named preset; ignored when --config is given.
    #[arg(long, default_value = "tiny")]
    pub preset: String,
    /// JSON preset file (name, model, lr, epochs).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Comma-separated held-out subjects; defaults to the top 20% of ids.
    #[arg(long, value_delimiter = ',')]
    pub test_subjects: Option<Vec<i32>>,
    #[arg(long)]
    pub class_weights: bool,
    #[arg(long)]
    pub disable_correction: bool,
    /// Model checkpoint path; history and metrics are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict to these subjects.
    #[arg(long, value_delimiter = ',')]
    pub subjects: Option<Vec<i32>>,
    #[arg(long, value_enum, default_value_t = ModeArg::Soft)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Metrics JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-family correction magnitudes (family, dataset, mean_rel_delta).
    #[arg(long)]
    pub deltas: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct GradCheckArgs {
    /// `all` or one of tensor, tsf, correction, model, loss.
    #[arg(long, default_value = "all")]
    pub module: String,
    /// Seeded random inputs per operation.
    #[arg(long, default_value_t = 20)]
    pub inputs: usize,
    #[arg(long, default_value = "grad_check.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub block: usize,
    /// Noise σ in units of each channel's std.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.01, 0.02, 0.04, 0.08])]
    pub noise: Vec<f64>,
    /// Rotation angles in degrees; skipped by default without tri-axial groups.
    #[arg(long, value_delimiter = ',')]
    pub rotation: Option<Vec<f64>>,
    /// Circular shifts as fractions of the window.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.1, 0.25, 0.5])]
    pub shift: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct RfArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Block sizes; defaults to 32 and the window length.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<usize>>,
    #[arg(long, default_value_t = 300)]
    pub trees: usize,
    #[arg(long, default_value_t = 20)]
    pub max_depth: usize,
    /// Features tried per split; defaults to ⌊√D⌋.
    #[arg(long)]
    pub max_features: Option<usize>,
    /// Plain Gini instead of balanced class weights.
    #[arg(long)]
    pub unbalanced: bool,
    #[arg(long, value_delimiter = ',')]
    pub test_subjects: Option<Vec<i32>>,
    /// Metrics JSON path; defaults to `<data>.rf.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also save the fitted forest.
    #[arg(long)]
    pub save_forest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ProbeArgs {
    /// TCNet checkpoint.
    #[arg(long, conflicts_with = "encoder", required_unless_present = "encoder")]
    pub model: Option<PathBuf>,
    /// Compact encoder checkpoint.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Block size of the anchor targets.
    #[arg(long, default_value_t = 32)]
    pub block: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, value_delimiter = ',')]
    pub test_subjects: Option<Vec<i32>>,
    #[arg(long, value_enum, default_value_t = ModeArg::Soft)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub block: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Fraction of windows held out to score the pretext heads.
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
    /// Encoder checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct FreezeArgs {
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 128)]
    pub length: usize,
    #[arg(long, default_value_t = 50.0)]
    pub fs: f64,
    /// White noise (classes × per-class windows, one label) instead.
    #[arg(long)]
    pub noise: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ImportArgs {
    #[arg(long)]
    pub dir: PathBuf,
    /// JSON manifest: channels, label_column, subject_column, window_length, overlap.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Short machine-readable class of an error.
fn error_kind(err: &anyhow::Error) -> &'static str {
    use tcnet::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tcnet::Error>() {
            return match e {
                E::Config(_) => "config",
                E::Invalid(_) | E::MissingColumn(_) => "invalid-input",
                E::Format(_) | E::Truncated(_) | E::Version { .. } => "format",
                E::NonFinite(_) => "non-finite",
                E::Io(_) => "io",
                E::Json(_) | E::Csv(_) => "parse",
                _ => "runtime",
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if let Some(k) = cause.downcast_ref::<commands::Failure>() {
            return k.kind;
        }
    }
    "runtime"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({
                "error": error_kind(&err),
                "message": format!("{err:#}"),
            });
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}
