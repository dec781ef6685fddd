use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    /// Original text.
    pub raw: String,
    /// Preprocessed words; ids come from a vocabulary at batch time.
    #[serde(default)]
    pub words: Vec<String>,
    /// Index of the single part this utterance talks about, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentioned_part: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameRound {
    pub shape_ids: [String; 3],
    pub target_index: usize,
    pub utterance: Utterance,
}

impl GameRound {
    pub fn validate(&self) -> Result<()> {
        if self.target_index > 2 {
            return Err(Error::invalid(format!(
                "target index {} outside 0..3",
                self.target_index
            )));
        }
        let [a, b, c] = &self.shape_ids;
        if a == b || b == c || a == c {
            return Err(Error::invalid(format!("round shapes are not distinct: {a}, {b}, {c}")));
        }
        Ok(())
    }

    pub fn target_id(&self) -> &str {
        &self.shape_ids[self.target_index]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn check(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split ratios {all:?} must be in [0,1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Sizes for `n` items: train and val are rounded, test takes the rest.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64) * self.train).round() as usize;
        let val = (((n as f64) * self.val).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<GameRound>,
    pub val: Vec<GameRound>,
    pub test: Vec<GameRound>,
}

/// Random split by round (shapes may recur across splits).
pub fn split_rounds(rounds: &[GameRound], ratios: SplitRatios, seed: u64) -> Result<Splits> {
    ratios.check()?;
    if rounds.len() < 3 {
        return Err(Error::invalid(format!(
            "cannot split {} rounds three ways",
            rounds.len()
        )));
    }
    let mut order: Vec<usize> = (0..rounds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (ntr, nva, _) = ratios.sizes(rounds.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| rounds[i].clone()).collect();
    Ok(Splits {
        train: pick(&order[..ntr]),
        val: pick(&order[ntr..ntr + nva]),
        test: pick(&order[ntr + nva..]),
    })
}

/// Shape-disjoint split: shapes are assigned to splits, and a round is kept
/// only when all three of its shapes landed in the same split. Returns the
/// splits and the number of dropped rounds.
pub fn split_rounds_shape_disjoint(rounds: &[GameRound], ratios: SplitRatios, seed: u64) -> Result<(Splits, usize)> {
    ratios.check()?;
    let shapes: BTreeSet<&str> = rounds
        .iter()
        .flat_map(|r| r.shape_ids.iter().map(String::as_str))
        .collect();
    let mut shapes: Vec<&str> = shapes.into_iter().collect();
    if shapes.len() < 3 {
        return Err(Error::invalid("too few shapes for a shape-disjoint split"));
    }
    shapes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (ntr, nva, _) = ratios.sizes(shapes.len());
    let which: BTreeMap<&str, usize> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            (
                *s,
                if i < ntr {
                    0
                } else if i < ntr + nva {
                    1
                } else {
                    2
                },
            )
        })
        .collect();
    let mut out = Splits::default();
    let mut dropped = 0;
    for r in rounds {
        let s: BTreeSet<usize> = r.shape_ids.iter().map(|id| which[id.as_str()]).collect();
        match s.iter().next() {
            Some(&k) if s.len() == 1 => match k {
                0 => out.train.push(r.clone()),
                1 => out.val.push(r.clone()),
                _ => out.test.push(r.clone()),
            },
            _ => dropped += 1,
        }
    }
    Ok((out, dropped))
}

/// Sampling weights inversely proportional to the number of rounds that
/// mention the same part, normalized to sum to one. Every part with rounds
/// then carries the same total mass.
pub fn balanced_weights(rounds: &[GameRound]) -> Result<Vec<f64>> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, r) in rounds.iter().enumerate() {
        let k = r
            .utterance
            .mentioned_part
            .ok_or_else(|| Error::invalid(format!("round {i} has no mentioned part; cannot balance")))?;
        *counts.entry(k).or_default() += 1;
    }
    let parts = counts.len() as f64;
    Ok(rounds
        .iter()
        .map(|r| {
            let k = r.utterance.mentioned_part.unwrap_or_default();
            1.0 / (counts[&k] as f64 * parts)
        })
        .collect())
}

pub fn write_rounds_jsonl(path: &Path, rounds: &[GameRound]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in rounds {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rounds_jsonl(path: &Path) -> Result<Vec<GameRound>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: GameRound =
            serde_json::from_str(&line).map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        r.validate()
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round(i: usize, part: Option<usize>) -> GameRound {
        GameRound {
            shape_ids: [format!("s{i}"), format!("s{}", i + 1), format!("s{}", i + 2)],
            target_index: i % 3,
            utterance: Utterance {
                raw: format!("round {i}"),
                words: vec![],
                mentioned_part: part,
            },
        }
    }

    #[test]
    fn ten_rounds_split_8_1_1() {
        let rounds: Vec<_> = (0..10).map(|i| round(i, None)).collect();
        let s = split_rounds(&rounds, SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn full_corpus_split_sizes() {
        assert_eq!(SplitRatios::default().sizes(40660), (32528, 4066, 4066));
    }

    #[test]
    fn split_is_deterministic_disjoint_and_exhaustive() {
        let rounds: Vec<_> = (0..57).map(|i| round(i, None)).collect();
        let a = split_rounds(&rounds, SplitRatios::default(), 3).unwrap();
        let b = split_rounds(&rounds, SplitRatios::default(), 3).unwrap();
        assert_eq!(a, b);
        let mut raws: Vec<String> = a
            .train
            .iter()
            .chain(&a.val)
            .chain(&a.test)
            .map(|r| r.utterance.raw.clone())
            .collect();
        raws.sort();
        let mut expect: Vec<String> = rounds.iter().map(|r| r.utterance.raw.clone()).collect();
        expect.sort();
        assert_eq!(raws, expect);
    }

    #[test]
    fn too_few_rounds() {
        assert!(split_rounds(&[round(0, None)], SplitRatios::default(), 0).is_err());
    }

    #[test]
    fn bad_ratios() {
        let rounds: Vec<_> = (0..10).map(|i| round(i, None)).collect();
        let r = SplitRatios {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(split_rounds(&rounds, r, 0).is_err());
    }

    #[test]
    fn shape_disjoint_split_has_no_shared_shapes() {
        let rounds: Vec<_> = (0..200).map(|i| round(i % 40 * 3, None)).collect();
        let (s, dropped) = split_rounds_shape_disjoint(&rounds, SplitRatios::default(), 5).unwrap();
        let ids =
            |v: &[GameRound]| -> BTreeSet<String> { v.iter().flat_map(|r| r.shape_ids.iter().cloned()).collect() };
        assert!(ids(&s.train).is_disjoint(&ids(&s.val)));
        assert!(ids(&s.train).is_disjoint(&ids(&s.test)));
        assert!(ids(&s.val).is_disjoint(&ids(&s.test)));
        assert_eq!(s.train.len() + s.val.len() + s.test.len() + dropped, 200);
    }

    #[test]
    fn uniform_counts_give_equal_weights() {
        let rounds = vec![
            round(0, Some(0)),
            round(1, Some(0)),
            round(2, Some(2)),
            round(3, Some(2)),
        ];
        let w = balanced_weights(&rounds).unwrap();
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-12));
    }

    #[test]
    fn inverse_frequency() {
        // Three "back" rounds and one "seat" round: 1/6 each for back, 1/2 for seat.
        let rounds = vec![
            round(0, Some(0)),
            round(1, Some(0)),
            round(2, Some(0)),
            round(3, Some(1)),
        ];
        let w = balanced_weights(&rounds).unwrap();
        assert!((w[3] - 3.0 * w[0]).abs() < 1e-12);
        assert!((w[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_part_is_an_error() {
        assert!(balanced_weights(&[round(0, None)]).is_err());
    }

    #[test]
    fn validation() {
        let mut r = round(0, None);
        r.target_index = 3;
        assert!(r.validate().is_err());
        let mut r = round(0, None);
        r.shape_ids[1] = r.shape_ids[0].clone();
        assert!(r.validate().is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let rounds: Vec<_> = (0..5).map(|i| round(i, Some(i % 2))).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        write_rounds_jsonl(&p, &rounds).unwrap();
        assert_eq!(read_rounds_jsonl(&p).unwrap(), rounds);
    }
}
