use std::path::PathBuf;

use bsnn::convert::InsertedThreshold;
use bsnn::graph::{ArchOption, ResetMode};
use bsnn::train::{Activation, OptimizerKind, Phase};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Serialize, Serializer};

#[derive(Debug, Parser)]
#[command(name = "bsnn", version, about = "Train, convert and simulate binary-weight spiking networks")]
pub struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true, env = "BSNN_THREADS")]
    pub threads: Option<usize>,

    /// JSON object supplying any flag of the chosen command; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic oriented-grating dataset.
    Synth(SynthArgs),
    /// Train a constrained network (full precision or binary from scratch).
    Train(TrainArgs),
    /// Binarize a full-precision checkpoint and fine-tune it.
    Binarize(BinarizeArgs),
    /// Record activation maxima and write a threshold profile.
    Calibrate(CalibrateArgs),
    /// Rewrite a trained network into a spiking network.
    Convert(ConvertArgs),
    /// Run spiking inference and write per-sample results.
    Infer(InferArgs),
    /// Accuracy-vs-timestep curves across normalization percentiles.
    Sweep(SweepArgs),
    /// Operation counts, spiking rates and crossbar activity of a spiking network.
    Report(ReportArgs),
}

impl Command {
    pub const NAMES: [&'static str; 8] = [
        "synth",
        "train",
        "binarize",
        "calibrate",
        "convert",
        "infer",
        "sweep",
        "report",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Binarize(_) => "binarize",
            Command::Calibrate(_) => "calibrate",
            Command::Convert(_) => "convert",
            Command::Infer(_) => "infer",
            Command::Sweep(_) => "sweep",
            Command::Report(_) => "report",
        }
    }
}

fn display<T: std::fmt::Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn phase_name<S: Serializer>(v: &Phase, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(v.name())
}

fn optimizer_name<S: Serializer>(v: &Option<OptimizerKind>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(OptimizerKind::Sgd) => s.serialize_str("sgd"),
        Some(OptimizerKind::Adam) => s.serialize_str("adam"),
        None => s.serialize_none(),
    }
}

/// Writes the never-exit sentinel as `"none"` so manifests replay unchanged.
fn theta_repr<S: Serializer>(v: &Option<f32>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(t) if t.is_infinite() => s.serialize_str("none"),
        Some(t) => s.serialize_f32(*t),
        None => s.serialize_none(),
    }
}

fn parse_arch(s: &str) -> Result<ArchOption, String> {
    s.parse()
}

fn parse_reset(s: &str) -> Result<ResetMode, String> {
    s.parse()
}

fn parse_phase(s: &str) -> Result<Phase, String> {
    s.parse()
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    s.parse()
}

/// `none` means the threshold never triggers.
fn parse_theta(s: &str) -> Result<f32, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(f32::INFINITY);
    }
    let v: f32 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("confidence threshold must be positive or 'none', got {s}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Depth {
    Tiny,
    Vgg15,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationArg {
    Relu,
    Sign,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Sign => Activation::Sign,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InsertedArg {
    Calibrated,
    Inherit,
}

impl From<InsertedArg> for InsertedThreshold {
    fn from(a: InsertedArg) -> Self {
        match a {
            InsertedArg::Calibrated => InsertedThreshold::Calibrated,
            InsertedArg::Inherit => InsertedThreshold::Inherit,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 1200)]
    pub samples: usize,
    /// Image height and width in pixels.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Standard deviation of additive pixel noise.
    #[arg(long, default_value_t = 0.6)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimArgs {
    /// Override the phase's default optimizer (sgd or adam).
    #[arg(long, value_parser = parse_optimizer)]
    #[serde(serialize_with = "optimizer_name")]
    pub optimizer: Option<OptimizerKind>,
    /// Override the phase's default learning rate.
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub weight_decay: Option<f32>,
    /// Multiply the learning rate by 0.5 every this many epochs.
    #[arg(long)]
    pub lr_decay_every: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hold out the last fraction of the dataset for per-epoch validation.
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pooling placement: avg-before, avg-after, max-before or max-after.
    #[arg(long, value_parser = parse_arch, default_value = "avg-before")]
    #[serde(serialize_with = "display")]
    pub arch: ArchOption,
    #[arg(long, value_enum, default_value = "tiny")]
    pub depth: Depth,
    /// full-precision or scratch-binary.
    #[arg(long, value_parser = parse_phase, default_value = "full-precision")]
    #[serde(serialize_with = "phase_name")]
    pub phase: Phase,
    #[arg(long, value_enum, default_value = "relu")]
    pub activation: ActivationArg,
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct BinarizeArgs {
    /// Full-precision checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub epochs: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Threshold profile CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub percentile: f64,
    #[arg(long, default_value_t = 256)]
    pub calibration_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct ConvertArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Threshold profile written by `calibrate`.
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// sif (subtractive reset) or rif (reset to zero).
    #[arg(long, value_parser = parse_reset, default_value = "sif")]
    #[serde(serialize_with = "display")]
    pub reset: ResetMode,
    /// Threshold source for the extra neurons of avg-after and max-before networks.
    #[arg(long, value_enum, default_value = "calibrated")]
    pub inserted: InsertedArg,
    /// Optional CSV of the ANN-site to IF-layer correspondence.
    #[arg(long)]
    pub site_map: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimArgs {
    #[arg(long, default_value_t = 128)]
    pub timesteps: usize,
    /// Early-exit confidence threshold on the largest output potential, or `none`.
    #[arg(long, value_parser = parse_theta)]
    #[serde(serialize_with = "theta_repr")]
    pub early_exit: Option<f32>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct InferArgs {
    /// Spiking model written by `convert`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Per-sample results CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    /// Per-timestep spike counts CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SweepArgs {
    /// Trained (non-spiking) model.
    #[arg(long)]
    pub model: PathBuf,
    /// Evaluation dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset the calibration subset is drawn from; defaults to `--data`.
    #[arg(long)]
    pub calibration_data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', num_args = 1.., action = clap::ArgAction::Set, default_value = "100,99.9,99.7,99")]
    pub percentiles: Vec<f64>,
    #[arg(long, value_parser = parse_reset, default_value = "sif")]
    #[serde(serialize_with = "display")]
    pub reset: ResetMode,
    #[arg(long, default_value_t = 256)]
    pub calibration_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub timesteps: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct ReportArgs {
    /// Spiking model written by `convert`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-layer CSV with columns layer,kind,ops,ifr,normalized_ops.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    /// Sum operation counts over every layer in the normalization.
    #[arg(long)]
    pub include_all_layers: bool,
}
