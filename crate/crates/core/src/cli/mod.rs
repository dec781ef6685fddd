//! Command-line harness: `prepare`, `synth`, `train`, `eval`, `visualize`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input or config.

mod commands;
pub mod config;
pub mod dataset;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_eval, cmd_prepare, cmd_synth, cmd_train, cmd_visualize, CrossPartReport, EvalReport};
pub use config::{BaselineChoice, EvalConfig, ExperimentConfig, SplitName};
pub use dataset::PreparedDataset;

/// Environment variable naming the default bundle root.
pub const DATA_ENV: &str = "PARTGLOT_DATA";

#[derive(Debug, Parser)]
#[command(name = "partglot", version, about = "Part segmentation learned from reference games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a bundle and its rounds, detect mentioned parts, split and
    /// write a prepared dataset.
    Prepare(PrepareArgs),
    /// Generate a synthetic bundle and template reference games.
    Synth(SynthArgs),
    /// Train a listener into a fresh run directory.
    Train(TrainArgs),
    /// Score a run: accuracy, baselines, per-part mIoU, upper bound, cross-part matrix.
    Eval(EvalArgs),
    /// Colored point cloud, attention heat plot and word attention for one shape.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Bundle directory; relative paths resolve against $PARTGLOT_DATA.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Reference game rounds, one JSON object per line.
    #[arg(long)]
    pub rounds: PathBuf,
    /// Tab-separated `synonym<TAB>part` lexicon; the builtin one by default.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fail unless every shape carries ground-truth part labels.
    #[arg(long)]
    pub require_gt: bool,
    /// Split by shape instead of by round.
    #[arg(long)]
    pub shape_disjoint: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Builtin part catalog: `chair` or `table`.
    #[arg(long, default_value = "chair")]
    pub parts: String,
    #[arg(long, default_value_t = 300)]
    pub shapes: usize,
    #[arg(long, default_value_t = 3000)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives `bundle/` and `rounds.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config JSON; every field is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prepared dataset directory (overrides the config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Parent directory of run directories (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run name (overrides the config).
    #[arg(long)]
    pub run: Option<String>,
    /// Ablation switch to flip; repeatable.
    #[arg(long = "ablate")]
    pub ablate: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum)]
    pub split: Option<SplitName>,
    /// Expected query mode of the trained model.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<crate::model::Mode>,
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineChoice>,
    /// Labeled bundle of another category for the cross-part matrix.
    #[arg(long)]
    pub ood_bundle: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub shape_id: String,
    /// Utterance for the word-attention export; a part template by default.
    #[arg(long)]
    pub utterance: Option<String>,
}

/// JSON schemas of the experiment config and the evaluation report, keyed by
/// the file name they are shipped under in `docs/`.
pub fn schemas() -> Vec<(&'static str, schemars::schema::RootSchema)> {
    vec![
        ("config.schema.json", schemars::schema_for!(ExperimentConfig)),
        ("report.schema.json", schemars::schema_for!(EvalReport)),
    ]
}

fn parse_mode(s: &str) -> Result<crate::model::Mode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown mode {s}; expected pn_aware or pn_agnostic"))
}

/// Parses arguments, runs one command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => cmd_prepare(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Visualize(a) => cmd_visualize(&a).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
