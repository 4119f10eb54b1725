use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "hierclass", version, about = "Hierarchical image classification runs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic two-level dataset as PNG files plus a manifest.
    Generate(GenerateArgs),
    /// Train a flat baseline or run the hierarchical loop.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest split.
    Evaluate(EvaluateArgs),
    /// Print the flat vs hierarchical accuracy table for two evaluation reports.
    Compare(CompareArgs),
    /// Classify individual images.
    Predict(PredictArgs),
}

/// Output root shared by every artifact-producing command.
#[derive(Args, Debug)]
pub struct OutDir {
    /// Output directory [default: $HIERCLASS_OUT/<command>, else ./hierclass-out/<command>]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Taxonomy as JSON ({"type_names", "item_names", "item_to_type"});
    /// overrides --types and --items-per-type.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Comma-separated type names.
    #[arg(long, value_delimiter = ',', default_value = "main_dish,rice,soup,side_dish")]
    pub types: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub items_per_type: usize,
    /// Images per item (at least 10).
    #[arg(long, default_value_t = 30)]
    pub per_item: usize,
    /// Square image side in pixels (at least 16).
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train:validation:test ratio.
    #[arg(long, default_value = "8:1:1")]
    pub ratio: String,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Flat,
    Hier,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Flat `key = value` file with TrainConfig fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint whose backbone seeds the first stage.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Backbone spec as JSON [default: built-in small backbone]
    #[arg(long)]
    pub backbone: Option<PathBuf>,
    /// Initial learning rate [default: 0.001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Epochs per stage [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Hierarchical iterations at most [default: 5]
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Plateau decay factor [default: 0.03]
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Epochs without improvement before decay [default: 5]
    #[arg(long)]
    pub plateau_patience: Option<usize>,
    /// Learning-rate floor [default: 1e-7]
    #[arg(long)]
    pub min_lr: Option<f64>,
    /// Stop a stage after this many stale epochs, 0 = never [default: 0]
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    /// Minibatch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Run seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Any other config field, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Type,
    Item,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Label level [default: the level the checkpoint's head predicts]
    #[arg(long, value_enum)]
    pub level: Option<LevelArg>,
    /// Type-level checkpoint for type accuracy and hierarchy consistency.
    #[arg(long)]
    pub type_checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Evaluation report of the flat baseline.
    #[arg(long)]
    pub flat: PathBuf,
    /// Evaluation report of the hierarchical model.
    #[arg(long)]
    pub hier: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PNG files to classify.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
    /// Resize to this square side first [default: each image's own size]
    #[arg(long)]
    pub size: Option<usize>,
}
