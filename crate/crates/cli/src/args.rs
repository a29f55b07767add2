//! Command-line flags and their config-file mirror.
//!
//! Every option is an `Option` so that a value can come from the command
//! line, the `--config` file, or the built-in default, in that order of
//! precedence. TOML keys equal the long flag names; physics flags live in
//! the `[model]` table, everything else in a table named after the
//! subcommand.

use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use ringflow_core::energy::Normalization;
use ringflow_core::DeltaMode;
use serde::{Deserialize, Serialize};

/// Seeds stay below 2^63 so that every value fits a TOML integer.
pub const MAX_SEED: u64 = i64::MAX as u64;

fn seed_parser() -> clap::builder::RangedU64ValueParser<u64> {
    clap::value_parser!(u64).range(..=MAX_SEED)
}

/// Fills each `None` field of `self` from `fallback`.
pub trait Merge {
    fn merge(self, fallback: Self) -> Self;
}

macro_rules! merge_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl Merge for $ty {
            fn merge(self, fallback: Self) -> Self {
                Self { $($field: self.$field.or(fallback.$field)),* }
            }
        }
    };
    // physics flags merge with the `[model]` table instead
    ($ty:ty { $($field:ident),* $(,)? } + physics) => {
        impl Merge for $ty {
            fn merge(self, fallback: Self) -> Self {
                Self { $($field: self.$field.or(fallback.$field),)* physics: self.physics }
            }
        }
    };
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PhysicsArgs {
    /// Base coupling strength K0 [default: 1]
    #[arg(long, allow_negative_numbers = true)]
    pub k0: Option<f64>,
    /// External field B [default: 1]
    #[arg(long, allow_negative_numbers = true)]
    pub b: Option<f64>,
    /// Inverse temperature beta [default: 1]
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Pre-exponential factor a0, in (0, 1] [default: 1]
    #[arg(long)]
    pub a0: Option<f64>,
    /// Interaction range d_l in sites; couples offsets 1..d_l-1 [default: 5]
    #[arg(long)]
    pub look_ahead: Option<usize>,
    /// Vehicle density in [0, 1] [default: 0.5]
    #[arg(long)]
    pub density: Option<f64>,
    /// Energy entering the acceptance rule: exchange-delta or literal-site-h [default: exchange-delta]
    #[arg(long)]
    pub delta_mode: Option<DeltaMode>,
}

merge_fields!(PhysicsArgs { k0, b, beta, a0, look_ahead, density, delta_mode });

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Simulate one trajectory and write its time-space diagram.
    Simulate(SimulateArgs),
    /// Compare normalized interaction-energy distributions across ring sizes.
    AnalyzeEnergy(EnergyArgs),
    /// Simulate an ensemble and cut one training sample per trajectory.
    GenDataset(DatasetArgs),
    /// Split a dataset file into train and test files.
    Split(SplitArgs),
    /// Train the next-state predictor.
    Train(TrainArgs),
    /// Roll a trained model forward from a seed window.
    Predict(PredictArgs),
    /// Run a complete experiment end to end with fixed settings.
    Reproduce(ReproduceArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::AnalyzeEnergy(_) => "analyze-energy",
            Command::GenDataset(_) => "gen-dataset",
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Reproduce(_) => "reproduce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageFormat {
    /// Binary graymap.
    P5,
    /// ASCII graymap.
    P2,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// Ring size N [default: 100]
    #[arg(long)]
    pub sites: Option<usize>,
    /// Number of sweeps T; the diagram has T+1 rows [default: 200]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Random seed [default: drawn from entropy and printed]
    #[arg(long, value_parser = seed_parser())]
    pub seed: Option<u64>,
    /// Output file; `.csv` writes 0/1 rows, anything else a graymap
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Graymap encoding [default: p5]
    #[arg(long, value_enum)]
    pub format: Option<ImageFormat>,
    #[command(flatten)]
    #[serde(skip)]
    pub physics: PhysicsArgs,
}

merge_fields!(SimulateArgs { sites, steps, seed, out, format } + physics);

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EnergyArgs {
    /// Comma-separated ring sizes [default: 30,60,120,240,600]
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Random configurations per size [default: 3200]
    #[arg(long)]
    pub samples: Option<usize>,
    /// per-site, zscore or per-site-zscore [default: per-site-zscore]
    #[arg(long)]
    pub normalization: Option<Normalization>,
    /// Random seed [default: drawn from entropy and printed]
    #[arg(long, value_parser = seed_parser())]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub physics: PhysicsArgs,
}

merge_fields!(EnergyArgs { sizes, samples, normalization, seed, out } + physics);

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DatasetArgs {
    /// Number of trajectories, one sample each [default: 1000]
    #[arg(long)]
    pub runs: Option<usize>,
    /// Ring size N [default: 50]
    #[arg(long)]
    pub sites: Option<usize>,
    /// Input window W in steps [default: 30]
    #[arg(long)]
    pub window: Option<usize>,
    /// Base seed; run k uses a seed derived from it [default: drawn from entropy and printed]
    #[arg(long, value_parser = seed_parser())]
    pub seed: Option<u64>,
    /// Output dataset file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a CSV dump of every sample row
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub physics: PhysicsArgs,
}

merge_fields!(DatasetArgs { runs, sites, window, seed, out, csv } + physics);

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SplitArgs {
    /// Input dataset file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fraction of samples held out, in (0, 1) [default: 0.2]
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Shuffle seed [default: drawn from entropy and printed]
    #[arg(long, value_parser = seed_parser())]
    pub seed: Option<u64>,
    /// Output file for the training part [default: <data>.train.trmc]
    #[arg(long)]
    pub train_out: Option<PathBuf>,
    /// Output file for the held-out part [default: <data>.test.trmc]
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

merge_fields!(SplitArgs { data, ratio, seed, train_out, test_out });

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Two 16-channel width-5 convolutions, 64 dense and 64 LSTM units, momentum SGD.
    Default,
    /// Two 8-channel width-7 convolutions, 4 dense and 8 LSTM units, Adam.
    Compact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Momentum,
    Adam,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Dataset file; split into train and held-out parts unless --test is given
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out dataset file; --data is then used whole for training
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Held-out fraction when splitting --data [default: 0.2]
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Shuffle seed of the split [default: drawn from entropy and printed]
    #[arg(long, value_parser = seed_parser())]
    pub split_seed: Option<u64>,
    /// Starting hyperparameters, overridden by the flags below [default: default]
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Vehicle-count penalty weight
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerKind>,
    /// Momentum coefficient (momentum optimizer only)
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Width of the per-site input layer
    #[arg(long)]
    pub dense_in: Option<usize>,
    /// Odd kernel width of both convolutions
    #[arg(long)]
    pub kernel_width: Option<usize>,
    /// Channel count of both convolutions
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub lstm_hidden: Option<usize>,
    /// Global gradient-norm clip; 0 disables
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Weight initialization, dropout and batch-order seed [default: drawn from entropy and printed]
    #[arg(long, value_parser = seed_parser())]
    pub init_seed: Option<u64>,
    /// Output checkpoint file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch metrics CSV
    #[arg(long)]
    pub history: Option<PathBuf>,
}

merge_fields!(TrainArgs {
    data,
    test,
    ratio,
    split_seed,
    preset,
    epochs,
    alpha,
    learning_rate,
    optimizer,
    momentum,
    batch_size,
    dropout,
    dense_in,
    kernel_width,
    channels,
    lstm_hidden,
    grad_clip,
    init_seed,
    out,
    history,
});

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PredictArgs {
    /// Checkpoint file
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Seed diagram CSV of N comma-separated 0/1 values per row; its last W rows seed the model
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of predicted steps [default: 30]
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Output diagram (seed rows plus predictions); `.csv` or graymap
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// True diagram CSV to compare against: either the continuation only
    /// or the seed window followed by it
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Side-by-side truth | prediction graymap [default: <out stem>.compare.pgm]
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Graymap encoding [default: p5]
    #[arg(long, value_enum)]
    pub format: Option<ImageFormat>,
}

merge_fields!(PredictArgs { model, input, horizon, out, truth, compare, format });

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Energy histograms for N in {30,60,120,240,600}, 3200 samples each, plus divergence matrices.
    EnergyScaling,
    /// 1000-trajectory dataset (N=50, W=30), 80/20 split, compact predictor; checkpoint and history.
    Training,
    /// 30-step rollout from the first held-out window next to the true continuation.
    Rollout,
    /// All of the above, in order.
    All,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ReproduceArgs {
    #[arg(value_enum, required = true)]
    #[serde(skip)]
    pub experiment: Option<Experiment>,
    /// Output directory [default: reproduce]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed shared by every stage [default: 2024]
    #[arg(long, value_parser = seed_parser())]
    pub seed: Option<u64>,
    /// Training epochs [default: 6]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Use this checkpoint for the rollout instead of training one
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub physics: PhysicsArgs,
}

merge_fields!(ReproduceArgs { experiment, out, seed, epochs, model } + physics);

/// Layout of the `--config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub model: PhysicsArgs,
    pub simulate: SimulateArgs,
    pub analyze_energy: EnergyArgs,
    pub gen_dataset: DatasetArgs,
    pub split: SplitArgs,
    pub train: TrainArgs,
    pub predict: PredictArgs,
    pub reproduce: ReproduceArgs,
}
