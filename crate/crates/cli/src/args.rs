use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fuzztarget::report::Filter;
use fuzztarget::TableKind;

#[derive(Debug, Parser)]
#[command(name = "fuzztarget", version, about = "Rank LLVM IR functions and basic blocks by predicted vulnerability")]
pub struct Cli {
    /// TOML file overriding built-in defaults. Command-line flags win over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract per-file feature fragments from textual IR.
    Extract(ExtractArgs),
    /// Concatenate fragments into one dataset with a header.
    Assemble(AssembleArgs),
    /// Train a model on a held-out split and report test metrics.
    Train(TrainArgs),
    /// Score a labelled dataset with a trained model.
    Evaluate(EvaluateArgs),
    /// List predicted-vulnerable rows of a feature file.
    Predict(PredictArgs),
    /// Grid search with stratified cross-validation.
    Tune(TuneArgs),
    /// Run the HTTP prediction service.
    Serve(ServeArgs),
    /// Write a small labelled IR corpus for end-to-end runs.
    ToyCorpus(ToyCorpusArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Function,
    Block,
}

impl From<KindArg> for TableKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Function => TableKind::Function,
            KindArg::Block => TableKind::Block,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Gbdt,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    All,
    High,
    Sure,
}

impl From<FilterArg> for Filter {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::All => Filter::All,
            FilterArg::High => Filter::High,
            FilterArg::Sure => Filter::Sure,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// `.ll` files or directories searched recursively.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "function")]
    pub kind: KindArg,
    /// Force this label on every row instead of reading name markers.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub label: Option<u8>,
    /// Count call sites from all inputs when computing function in-degree.
    #[arg(long)]
    pub corpus_callgraph: bool,
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    pub fragment_dir: PathBuf,
    #[arg(long, value_enum, default_value = "function")]
    pub kind: KindArg,
    /// Defaults to `<fragment_dir>/<kind>_features.ssv`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// Options shared by `train` and `tune`.
#[derive(Debug, Args)]
pub struct TrainingInputs {
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "function")]
    pub kind: KindArg,
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Built-in (`none`, `function-default`, `function-nomem`,
    /// `block-default`) or defined under `[profiles]` in the config file.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hyperparameter override, `name=value` with a JSON value. Repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub inputs: TrainingInputs,
    #[arg(short, long, value_name = "FILE")]
    pub out: PathBuf,
    /// Defaults to the model path with `.report.json` appended.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Needed only for models saved without a table kind.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Include ROC and precision-recall curve points.
    #[arg(long)]
    pub curves: bool,
    /// Include permutation importance (and gain importance for GBDT).
    #[arg(long)]
    pub importance: bool,
    /// Retrain at these training-set fractions, e.g. `0.2,0.5,1.0`.
    #[arg(long, value_delimiter = ',', value_name = "FRACTIONS")]
    pub learning_curve: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub high: Option<f64>,
    #[arg(long)]
    pub sure: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub features: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long, value_enum, default_value = "all")]
    pub filter: FilterArg,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub inputs: TrainingInputs,
    /// TOML or JSON table mapping hyperparameter names to value lists.
    #[arg(long, value_name = "FILE")]
    pub grid: PathBuf,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// `ID=PATH` with ID one of dnnfn, dnnbb, gbdtfn, gbdtbb. Repeatable.
    #[arg(long = "model", value_name = "ID=PATH")]
    pub models: Vec<String>,
    /// Directory of the browser UI bundle.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Debug, Args)]
pub struct ToyCorpusArgs {
    #[arg(short, long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}
