//! Command-line surface. Every optional flag overrides the matching key of
//! the `--config` file, which in turn overrides the built-in defaults.

use std::path::PathBuf;

use adcf_core::loss::LossMode;
use adcf_core::trainer::{BatchStrategy, CostObjective, System, ThresholdMode};
use clap::{Args, Parser, Subcommand};
use serde::de::{value::StrDeserializer, DeserializeOwned, IntoDeserializer};

#[derive(Debug, Parser)]
#[command(name = "adcf", version, about = "Train and evaluate a-DCF optimized SASV back-ends")]
pub struct Cli {
    /// TOML config file; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for data generation, splitting, initialization and batching.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic three-class trial set split into trn/dev/eval.
    Synth(SynthArgs),
    /// Train one back-end system.
    Train(TrainArgs),
    /// Score a trial file with a checkpoint.
    Score(ScoreArgs),
    /// Compute a-DCF, min a-DCF, EERs and optional curves from a score file.
    Evaluate(EvaluateArgs),
    /// Tabulate several training runs side by side.
    Compare(CompareArgs),
}

/// Parses the same spellings the config file accepts (`soft-adcf`, `s4`, ...).
fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    let de: StrDeserializer<'_, serde::de::value::Error> = s.into_deserializer();
    T::deserialize(de).map_err(|e| e.to_string())
}

#[derive(Debug, Default, Args)]
pub struct CostArgs {
    /// Named cost/prior preset: 1, 2 or 3.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub setting: Option<u8>,
    #[arg(long)]
    pub c_miss_tar: Option<f64>,
    #[arg(long)]
    pub c_fa_non: Option<f64>,
    #[arg(long)]
    pub c_fa_spf: Option<f64>,
    #[arg(long)]
    pub pi_tar: Option<f64>,
    #[arg(long)]
    pub pi_non: Option<f64>,
    #[arg(long)]
    pub pi_spf: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub grid_lo: Option<f64>,
    #[arg(long)]
    pub grid_hi: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub d_asv: Option<usize>,
    #[arg(long)]
    pub d_cm: Option<usize>,
    #[arg(long)]
    pub n_tar: Option<usize>,
    #[arg(long)]
    pub n_non: Option<usize>,
    #[arg(long)]
    pub n_spf: Option<usize>,
    #[arg(long)]
    pub n_speakers: Option<usize>,
    #[arg(long)]
    pub n_impostors: Option<usize>,
    #[arg(long)]
    pub n_attacks: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// trn,dev,eval fractions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub fractions: Option<Vec<f64>>,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// Preset: s1 (BCE), s2 (soft a-DCF), s3 (both), s4 (both + threshold search).
    #[arg(long, value_parser = serde_value::<System>)]
    pub system: Option<System>,
    #[arg(long, value_name = "PATH")]
    pub trn: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub dev: Option<PathBuf>,
    /// Optional evaluation trials; scored with the selected model.
    #[arg(long, value_name = "PATH")]
    pub eval: Option<PathBuf>,
    #[arg(long = "loss", value_parser = serde_value::<LossMode>)]
    pub loss_mode: Option<LossMode>,
    #[arg(long, value_parser = serde_value::<ThresholdMode>)]
    pub threshold_mode: Option<ThresholdMode>,
    #[arg(long, value_parser = serde_value::<CostObjective>)]
    pub threshold_objective: Option<CostObjective>,
    #[arg(long, value_parser = serde_value::<CostObjective>)]
    pub selection_metric: Option<CostObjective>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_parser = serde_value::<BatchStrategy>)]
    pub batch_strategy: Option<BatchStrategy>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many epochs without improvement; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Sigmoid steepness of the soft a-DCF.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub leaky_slope: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub cost: CostArgs,
}

#[derive(Debug, Default, Args)]
pub struct ScoreArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub trials: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    pub scores: Option<PathBuf>,
    /// Also report the a-DCF at this threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Divide costs by the better trivial system's cost.
    #[arg(long)]
    pub normalized: bool,
    /// Write a-DCF-vs-threshold and DET curves as CSV.
    #[arg(long)]
    pub curves: bool,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub cost: CostArgs,
}

#[derive(Debug, Default, Args)]
pub struct CompareArgs {
    /// Run directories written by `adcf train`.
    #[arg(value_name = "RUN_DIR")]
    pub runs: Vec<PathBuf>,
    #[command(flatten)]
    pub cost: CostArgs,
}
