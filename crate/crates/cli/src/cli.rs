use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "isib", version, about = "Accent-robust discrete-token ASR experiments on synthetic speech")]
pub struct Cli {
    /// Overrides the configured seed (experiment seeds become seed, seed+1, ...).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the L1, L2 and accented corpora of one seed.
    GenData(GenDataArgs),
    /// Fit k-means centroids on a native corpus and write an untrained checkpoint.
    InitCentroids(InitArgs),
    /// Run training stage 1, stage 2, or both.
    Train(TrainArgs),
    /// Print the error breakdown of a checkpoint on a corpus as JSON.
    Eval(EvalArgs),
    /// Write one line of token ids per utterance.
    Tokenize(TokenizeArgs),
    /// Run the native-only and/or accent-adapted experiments.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (default: paths.data_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LangArg {
    L1,
    L2,
}

impl From<LangArg> for isib_core::synthlang::Lang {
    fn from(l: LangArg) -> Self {
        match l {
            LangArg::L1 => isib_core::synthlang::Lang::L1,
            LangArg::L2 => isib_core::synthlang::Lang::L2,
        }
    }
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub init: LangArg,
    /// Dataset directory (default: paths.data_dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub stage: StageArg,
    #[arg(long, value_enum)]
    pub init: LangArg,
    /// Multitask weight of the L1 loss (default: experiment.train.alpha).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Starting checkpoint: an init checkpoint for stage 1, a stage-1 one for stage 2.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A corpus directory (one containing index.json).
    #[arg(long)]
    pub data: PathBuf,
    /// Head to decode with (default: the corpus language).
    #[arg(long, value_enum)]
    pub lang: Option<LangArg>,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Native,
    Adapted,
    Both,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub scenario: Scenario,
    /// Report directory (default: paths.report_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every trained checkpoint under <out>/checkpoints.
    #[arg(long)]
    pub save_checkpoints: bool,
}
