use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct EncoderConfig {
    pub word_embedding_dim: usize,
    pub lstm_hidden_dim: usize,
    pub segment_feature_dim: usize,
    pub attention_dim: usize,
    pub part_embedding_dim: usize,
    /// Number of shared per-point layers in the segment encoder.
    pub segment_mlp_depth: usize,
    pub listener_hidden_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            word_embedding_dim: 100,
            lstm_hidden_dim: 64,
            segment_feature_dim: 64,
            attention_dim: 64,
            part_embedding_dim: 64,
            segment_mlp_depth: 2,
            listener_hidden_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.word_embedding_dim,
            self.lstm_hidden_dim,
            self.segment_feature_dim,
            self.attention_dim,
            self.part_embedding_dim,
            self.segment_mlp_depth,
            self.listener_hidden_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("every encoder dimension must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Utterance query, one softmax over super-segments.
    PnAgnostic,
    /// Part-name queries, double softmax.
    PnAware,
}

/// Normalization applied to the S×K logit matrix in PN-Aware mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxMode {
    /// Over part names, then over super-segments.
    PnThenSs,
    /// Over super-segments only.
    SsOnly,
    /// Over part names only.
    PnOnly,
    /// Over super-segments, then over part names.
    SsThenPn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    SuperSegments,
    /// Every point is its own segment.
    RawPoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub mode: Mode,
    pub softmax_mode: SoftmaxMode,
    pub input_mode: InputMode,
    /// Unit-normalize queries, keys and values.
    pub normalize: bool,
    /// Concatenate the shape-level max-pooled feature to every segment feature.
    pub with_global_feature: bool,
    pub vocab_size: usize,
    pub part_names: Vec<String>,
    pub category: String,
    pub max_utterance_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            mode: Mode::PnAware,
            softmax_mode: SoftmaxMode::PnThenSs,
            input_mode: InputMode::SuperSegments,
            normalize: true,
            with_global_feature: false,
            vocab_size: 4,
            part_names: ["back", "seat", "leg", "arm"].map(String::from).to_vec(),
            category: "chair".into(),
            max_utterance_len: crate::language::DEFAULT_MAX_LEN,
        }
    }
}

impl ModelConfig {
    pub fn num_parts(&self) -> usize {
        self.part_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.part_names.len() < 2 {
            return Err(Error::invalid("model needs at least two part names"));
        }
        if self.vocab_size < 4 {
            return Err(Error::invalid("vocabulary must include the reserved tokens"));
        }
        if self.max_utterance_len == 0 {
            return Err(Error::invalid("max utterance length must be positive"));
        }
        Ok(())
    }
}
