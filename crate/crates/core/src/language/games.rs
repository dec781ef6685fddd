//! Template utterances: test-time part queries and synthetic reference games
//! built from part existence.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::parts::PartNameSet;
use super::rounds::{GameRound, Utterance};
use super::text::{preprocess_utterance, TextMaps};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::geometry::ShapeRecord;

/// Parts present (or absent) in fewer than this fraction of shapes are not sampled.
pub const MIN_PRESENCE_FRACTION: f64 = 0.1;
const MAX_PART_FAILURES: usize = 100;

/// Words of the PN-Agnostic query sentence for one part.
pub fn template_words(part_name: &str, category: &str) -> Vec<String> {
    format!("a {category} with {part_name}")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Token ids of `"a {category} with {part}"`; unknown words map to UNK.
pub fn template_query(part_name: &str, category: &str, vocab: &Vocabulary) -> Vec<u32> {
    template_words(part_name, category)
        .iter()
        .map(|w| vocab.id(w))
        .collect()
}

/// Sentence patterns with `{category}` and `{part}` placeholders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub present: Vec<String>,
    pub absent: Vec<String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            present: vec![
                "a {category} with {part}".into(),
                "the {category} that has {part}".into(),
                "the one with {part}".into(),
            ],
            absent: vec![
                "a {category} without {part}".into(),
                "the {category} that has no {part}".into(),
                "the one with no {part}".into(),
            ],
        }
    }
}

impl TemplateSet {
    fn fill(pattern: &str, category: &str, part: &str) -> String {
        pattern.replace("{category}", category).replace("{part}", part)
    }
}

/// Indices of parts whose presence rate lies in `[0.1, 0.9]`.
pub fn eligible_parts(shapes: &[&ShapeRecord], num_parts: usize) -> Vec<usize> {
    if shapes.is_empty() {
        return Vec::new();
    }
    (0..num_parts)
        .filter(|&k| {
            let present = shapes
                .iter()
                .filter(|s| s.gt.as_ref().is_some_and(|g| g.contains_part(k)))
                .count() as f64
                / shapes.len() as f64;
            present >= MIN_PRESENCE_FRACTION && 1.0 - present >= MIN_PRESENCE_FRACTION
        })
        .collect()
}

/// Builds `count` rounds. Each round picks an eligible part and a polarity;
/// the target satisfies the sentence and both distractors violate it.
pub fn synthesize_reference_games(
    shapes: &[ShapeRecord],
    parts: &PartNameSet,
    templates: &TemplateSet,
    maps: &TextMaps,
    count: usize,
    seed: u64,
) -> Result<Vec<GameRound>> {
    let labeled: Vec<&ShapeRecord> = shapes.iter().filter(|s| s.gt.is_some()).collect();
    if labeled.len() < 3 {
        return Err(Error::invalid("reference games need at least three labeled shapes"));
    }
    if templates.present.is_empty() || templates.absent.is_empty() {
        return Err(Error::invalid("template set needs present and absent patterns"));
    }
    let category = labeled[0].category.clone();
    let mut eligible = eligible_parts(&labeled, parts.len());
    if eligible.is_empty() {
        return Err(Error::invalid(
            "no part is both present and absent in at least 10% of shapes",
        ));
    }
    let has = |s: &ShapeRecord, k: usize| s.gt.as_ref().is_some_and(|g| g.contains_part(k));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = vec![0usize; parts.len()];
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if eligible.is_empty() {
            return Err(Error::invalid(
                "every part was skipped after repeated sampling failures",
            ));
        }
        let k = *eligible.choose(&mut rng).expect("nonempty");
        let present = rng.gen::<bool>();
        let (yes, no): (Vec<&ShapeRecord>, Vec<&ShapeRecord>) = labeled.iter().partition(|s| has(s, k) == present);
        if yes.is_empty() || no.len() < 2 {
            failures[k] += 1;
            if failures[k] >= MAX_PART_FAILURES {
                log::warn!(
                    "skipping part {} after {MAX_PART_FAILURES} failed samples",
                    parts.names()[k]
                );
                eligible.retain(|&e| e != k);
            }
            continue;
        }
        let target = yes.choose(&mut rng).expect("nonempty");
        let distractors: Vec<&&ShapeRecord> = no.choose_multiple(&mut rng, 2).collect();
        let target_index = rng.gen_range(0..3);
        let mut ids: Vec<String> = distractors.iter().map(|s| s.id.clone()).collect();
        ids.insert(target_index, target.id.clone());

        let pool = if present { &templates.present } else { &templates.absent };
        let pattern = pool.choose(&mut rng).expect("nonempty");
        let raw = TemplateSet::fill(pattern, &category, &parts.names()[k]);
        let words = preprocess_utterance(&raw, maps).tokens;
        let mentioned_part = parts.detect_mentioned_part(&words);
        out.push(GameRound {
            shape_ids: [ids[0].clone(), ids[1].clone(), ids[2].clone()],
            target_index,
            utterance: Utterance {
                raw,
                words,
                mentioned_part,
            },
        });
    }
    Ok(out)
}

/// True when the sentence polarity is "absent" (contains a negation word).
pub fn is_negated(words: &[String]) -> bool {
    words.iter().any(|w| w == "without" || w == "no" || w == "not")
}
