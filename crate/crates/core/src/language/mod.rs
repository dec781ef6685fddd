//! Utterance preprocessing, vocabulary, part mentions and reference-game rounds.

pub mod games;
pub mod parts;
pub mod rounds;
pub mod text;
pub mod vocab;

pub use games::{synthesize_reference_games, template_query, template_words, TemplateSet};
pub use parts::PartNameSet;
pub use rounds::{
    balanced_weights, read_rounds_jsonl, split_rounds, split_rounds_shape_disjoint, write_rounds_jsonl, GameRound,
    SplitRatios, Splits, Utterance,
};
pub use text::{preprocess_utterance, Preprocessed, TextMaps};
pub use vocab::{Vocabulary, DEFAULT_MAX_LEN, PAD, UNK};
