use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::IouAverageSet;
use crate::model::{EncoderConfig, InputMode, Mode, ModelConfig, SoftmaxMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_ce: f64,
    pub lambda_coseg: f64,
    pub label_smoothing: f64,
    /// Group consistency loss; off by default.
    pub coseg: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_ce: 1e-2,
            lambda_coseg: 1e-2,
            label_smoothing: 0.1,
            coseg: false,
        }
    }
}

/// Every training knob, including the ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_power: f64,
    pub seed: u64,
    pub losses: LossConfig,
    pub mode: Mode,
    pub softmax_mode: SoftmaxMode,
    pub input_mode: InputMode,
    pub no_normalization: bool,
    pub with_global_feature: bool,
    pub no_ce_reg: bool,
    pub encoder: EncoderConfig,
    pub max_utterance_len: usize,
    /// Annotated shapes for the few-shot step after each epoch (0 disables it).
    pub few_shot_shapes: usize,
    /// Sample rounds inversely to their part's frequency.
    pub balanced_sampling: bool,
    pub iou_average_set: IouAverageSet,
    /// Skip the per-epoch validation mIoU (accuracy is still reported).
    pub skip_val_miou: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr0: 1e-3,
            lr_power: 0.9,
            seed: 0,
            losses: LossConfig::default(),
            mode: Mode::PnAware,
            softmax_mode: SoftmaxMode::PnThenSs,
            input_mode: InputMode::SuperSegments,
            no_normalization: false,
            with_global_feature: false,
            no_ce_reg: false,
            encoder: EncoderConfig::default(),
            max_utterance_len: crate::language::DEFAULT_MAX_LEN,
            few_shot_shapes: 0,
            balanced_sampling: true,
            iou_average_set: IouAverageSet::AllParts,
            skip_val_miou: false,
        }
    }
}

/// Names accepted by [`TrainConfig::apply_ablation`].
pub const ABLATIONS: [&str; 9] = [
    "no_normalization",
    "with_global_feature",
    "no_ce_reg",
    "raw_points",
    "pn_agnostic",
    "ss_only",
    "pn_only",
    "ss_then_pn",
    "coseg",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid("initial learning rate must be positive"));
        }
        // Written so that NaN is rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.lr_power >= 0.0) {
            return Err(Error::invalid("schedule power must be non-negative"));
        }
        let l = &self.losses;
        if !(l.lambda_ce >= 0.0 && l.lambda_coseg >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if !(0.0..1.0).contains(&l.label_smoothing) {
            return Err(Error::invalid("label smoothing must lie in [0, 1)"));
        }
        if l.coseg && self.mode != Mode::PnAware {
            return Err(Error::invalid("group consistency loss needs PN-Aware part predictions"));
        }
        if self.max_utterance_len == 0 {
            return Err(Error::invalid("max utterance length must be positive"));
        }
        self.encoder.validate()
    }

    /// Flips one named switch.
    pub fn apply_ablation(&mut self, name: &str) -> Result<()> {
        match name {
            "no_normalization" => self.no_normalization = true,
            "with_global_feature" => self.with_global_feature = true,
            "no_ce_reg" => self.no_ce_reg = true,
            "raw_points" => self.input_mode = InputMode::RawPoints,
            "pn_agnostic" => self.mode = Mode::PnAgnostic,
            "ss_only" => self.softmax_mode = SoftmaxMode::SsOnly,
            "pn_only" => self.softmax_mode = SoftmaxMode::PnOnly,
            "ss_then_pn" => self.softmax_mode = SoftmaxMode::SsThenPn,
            "coseg" => self.losses.coseg = true,
            other => {
                return Err(Error::invalid(format!(
                    "unknown ablation {other}; expected one of {}",
                    ABLATIONS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// L_CE applies only where `Y` exists.
    pub fn uses_ce_reg(&self) -> bool {
        self.mode == Mode::PnAware && !self.no_ce_reg && self.losses.lambda_ce > 0.0
    }

    pub fn model_config(&self, vocab_size: usize, part_names: &[String], category: &str) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            mode: self.mode,
            softmax_mode: self.softmax_mode,
            input_mode: self.input_mode,
            normalize: !self.no_normalization,
            with_global_feature: self.with_global_feature,
            vocab_size,
            part_names: part_names.to_vec(),
            category: category.to_string(),
            max_utterance_len: self.max_utterance_len,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size), (30, 64));
        assert_eq!(c.lr0, 1e-3);
        assert_eq!(c.lr_power, 0.9);
        assert_eq!(c.losses.lambda_ce, 1e-2);
        assert_eq!(c.losses.lambda_coseg, 1e-2);
        assert_eq!(c.losses.label_smoothing, 0.1);
        assert!(!c.losses.coseg);
    }

    #[test]
    fn ablation_flips_one_switch() {
        for name in ABLATIONS {
            let mut c = TrainConfig::default();
            c.apply_ablation(name).unwrap();
            let a = serde_json::to_value(&c).unwrap();
            let b = serde_json::to_value(TrainConfig::default()).unwrap();
            let diff = count_diffs(&a, &b);
            assert_eq!(diff, 1, "{name}");
        }
        assert!(TrainConfig::default().apply_ablation("nope").is_err());
    }

    fn count_diffs(a: &serde_json::Value, b: &serde_json::Value) -> usize {
        match (a, b) {
            (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
                x.iter().map(|(k, v)| count_diffs(v, &y[k])).sum()
            }
            _ => usize::from(a != b),
        }
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let c = TrainConfig::default();
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(partial.epochs, 3);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
        let mut bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        bad = TrainConfig::default();
        bad.losses.label_smoothing = 1.0;
        assert!(bad.validate().is_err());
    }
}
