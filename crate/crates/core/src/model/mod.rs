//! Encoders, cross-attention and the listener built on them.

pub mod attention;
pub mod config;
pub mod encoders;
pub mod listener;

pub use attention::{
    aggregate, attend_pn_agnostic, attend_pn_aware, baseline_attention, extract_segmentation, AttentionBaseline,
    PnAwareMaps, Segmentation,
};
pub use config::{EncoderConfig, InputMode, Mode, ModelConfig, SoftmaxMode};
pub use encoders::{PartNameEncoder, SegmentBatch, SegmentEncoder, TokenBatch, UtteranceEncoder};
pub use listener::{ForwardOutput, Model, PreparedShape, RoundInput};
