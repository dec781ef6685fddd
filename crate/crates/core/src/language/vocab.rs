use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SOS: u32 = 2;
pub const EOS: u32 = 3;
const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<sos>", "<eos>"];

/// Default maximum utterance length in tokens.
pub const DEFAULT_MAX_LEN: usize = 33;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    min_count: usize,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds from tokenized sentences, keeping words seen at least `min_count` times.
    /// Word ids are assigned in lexicographic order after the reserved ids.
    pub fn build<'a, I, S>(sentences: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in sentences {
            for w in s {
                *counts.entry(w.as_ref().to_string()).or_default() += 1;
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            counts
                .into_iter()
                .filter(|(w, c)| *c >= min_count.max(1) && !RESERVED.contains(&w.as_str()))
                .map(|(w, _)| w),
        );
        Self::from_tokens(tokens, min_count)
    }

    fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self {
            tokens,
            min_count,
            index,
        }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(mut self) -> Self {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= RESERVED.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Encodes without padding. Sequences longer than `max_len` are truncated;
    /// the flag reports truncation.
    pub fn encode<S: AsRef<str>>(&self, words: &[S], max_len: usize) -> (Vec<u32>, bool) {
        let truncated = words.len() > max_len;
        let ids = words.iter().take(max_len).map(|w| self.id(w.as_ref())).collect();
        (ids, truncated)
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD)
            .map(|&i| self.token(i).unwrap_or("<unk>").to_string())
            .collect()
    }

    pub fn save_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load_json(text: &str) -> Result<Self> {
        let v: Vocabulary = serde_json::from_str(text)?;
        if v.tokens.len() < RESERVED.len() || v.tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::invalid("vocabulary is missing the reserved tokens"));
        }
        Ok(v.reindex())
    }
}

/// Pads to `len` with [`PAD`].
pub fn pad_to(ids: &[u32], len: usize) -> Vec<u32> {
    let mut out = ids.to_vec();
    out.resize(len.max(ids.len()), PAD);
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> Vocabulary {
        let s: Vec<Vec<String>> = vec![
            vec!["a".into(), "chair".into(), "with".into(), "arm".into()],
            vec!["thin".into(), "leg".into(), "leg".into()],
        ];
        Vocabulary::build(s.iter().map(Vec::as_slice), 1)
    }

    #[test]
    fn reserved_ids() {
        let v = sample();
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("<unk>"), UNK);
        assert_eq!(v.id("<sos>"), SOS);
        assert_eq!(v.id("<eos>"), EOS);
        assert_eq!(v.id("zebra"), UNK);
    }

    #[test]
    fn min_count_filters() {
        let s: Vec<Vec<String>> = vec![vec!["leg".into(), "leg".into(), "arm".into()]];
        let v = Vocabulary::build(s.iter().map(Vec::as_slice), 2);
        assert!(v.contains("leg"));
        assert!(!v.contains("arm"));
    }

    #[test]
    fn truncation_flag() {
        let v = sample();
        let (ids, t) = v.encode(&["a", "chair", "with", "arm"], 2);
        assert_eq!(ids.len(), 2);
        assert!(t);
    }

    #[test]
    fn json_roundtrip() {
        let v = sample();
        let back = Vocabulary::load_json(&v.save_json().unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("arm"), v.id("arm"));
    }

    proptest! {
        #[test]
        fn encode_decode_identity(idx in proptest::collection::vec(0usize..6, 1..20)) {
            let v = sample();
            let words = ["a", "chair", "with", "arm", "thin", "leg"];
            let sent: Vec<&str> = idx.iter().map(|&i| words[i]).collect();
            let (ids, _) = v.encode(&sent, 64);
            prop_assert_eq!(v.decode(&ids), sent.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        }
    }
}
