//! Prepared shapes and round encoding shared by training and evaluation.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{PartLabels, ShapeRecord};
use crate::language::{preprocess_utterance, GameRound, TextMaps, Vocabulary};
use crate::model::{InputMode, PreparedShape, RoundInput};

/// Shapes in model form, addressable by id, with optional ground truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub shapes: Vec<PreparedShape>,
    pub gt: Vec<Option<PartLabels>>,
    pub index: HashMap<String, usize>,
    pub input_mode: InputMode,
}

impl Dataset {
    pub fn new(records: &[ShapeRecord], input_mode: InputMode) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate shape id {}", r.id)));
            }
        }
        Ok(Self {
            shapes: records.iter().map(|r| PreparedShape::new(r, input_mode)).collect(),
            gt: records.iter().map(|r| r.gt.clone()).collect(),
            index,
            input_mode,
        })
    }

    pub fn get(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("round references unknown shape {id}")))
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Ids of labeled shapes used by `rounds`, in first-seen order.
    pub fn labeled_ids_in(&self, rounds: &[GameRound]) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for r in rounds {
            for id in &r.shape_ids {
                if let Some(&i) = self.index.get(id) {
                    if self.gt[i].is_some() && seen.insert(id.clone()) {
                        out.push(id.clone());
                    }
                }
            }
        }
        out
    }
}

/// Token ids of an utterance; falls back to preprocessing the raw text when
/// the round carries no words.
pub fn utterance_tokens(round: &GameRound, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    let words = if round.utterance.words.is_empty() {
        preprocess_utterance(&round.utterance.raw, &TextMaps::builtin()).tokens
    } else {
        round.utterance.words.clone()
    };
    vocab.encode(&words, max_len).0
}

/// Rounds with shape indices into the whole dataset.
pub fn encode_rounds(
    rounds: &[GameRound],
    data: &Dataset,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<RoundInput>> {
    rounds
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.validate()?;
            let tokens = utterance_tokens(r, vocab, max_len);
            if tokens.is_empty() {
                return Err(Error::invalid(format!("round {i} has an empty utterance")));
            }
            Ok(RoundInput {
                shapes: [
                    data.get(&r.shape_ids[0])?,
                    data.get(&r.shape_ids[1])?,
                    data.get(&r.shape_ids[2])?,
                ],
                target: r.target_index,
                tokens,
                part: r.utterance.mentioned_part,
            })
        })
        .collect()
}

/// Reindexes a batch onto its unique shapes. Returns the dataset indices of
/// the unique shapes and the rounds with local indices.
pub fn localize(rounds: &[&RoundInput]) -> (Vec<usize>, Vec<RoundInput>) {
    let mut unique = Vec::new();
    let mut local: HashMap<usize, usize> = HashMap::new();
    let out = rounds
        .iter()
        .map(|r| {
            let shapes = r.shapes.map(|j| {
                *local.entry(j).or_insert_with(|| {
                    unique.push(j);
                    unique.len() - 1
                })
            });
            RoundInput { shapes, ..(*r).clone() }
        })
        .collect();
    (unique, out)
}
