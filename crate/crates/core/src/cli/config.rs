use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Mode;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    #[default]
    Test,
}

/// Attention baselines to score next to the trained model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BaselineChoice {
    None,
    Uniform,
    Random,
    #[default]
    Both,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: SplitName,
    /// Query mode the model must have been trained in, if set.
    pub mode: Option<Mode>,
    pub baseline: BaselineChoice,
    /// Labeled bundle of another category for the cross-part matrix.
    pub ood_bundle: Option<PathBuf>,
}

/// Everything a run needs; the resolved copy is written into the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Prepared dataset directory.
    pub data: Option<PathBuf>,
    /// Parent of run directories.
    pub out_dir: PathBuf,
    pub run_name: Option<String>,
    /// Switches flipped on top of `train`, echoed for the record.
    pub ablations: Vec<String>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            out_dir: PathBuf::from("runs"),
            run_name: None,
            ablations: Vec::new(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

pub const EXPERIMENT_FILE: &str = "experiment.json";

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Applies the listed ablations and validates the training config.
    pub fn resolve(&mut self) -> Result<()> {
        for a in &self.ablations {
            self.train.apply_ablation(a)?;
        }
        self.train.validate()
    }

    /// Default run name: mode, ablations and seed.
    pub fn default_run_name(&self) -> String {
        let mode = match self.train.mode {
            Mode::PnAware => "pn_aware",
            Mode::PnAgnostic => "pn_agnostic",
        };
        let mut name = mode.to_string();
        for a in &self.ablations {
            name.push('-');
            name.push_str(a);
        }
        format!("{name}-seed{}", self.train.seed)
    }
}

/// `parent/name`, or `parent/name-N` with the smallest free N.
pub fn unique_run_dir(parent: &Path, name: &str) -> PathBuf {
    let first = parent.join(name);
    if !first.exists() {
        return first;
    }
    (1..)
        .map(|i| parent.join(format!("{name}-{i}")))
        .find(|p| !p.exists())
        .expect("unbounded search")
}
