use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::{load_tsv, parse_tsv};
use crate::error::{Error, Result};

const DEFAULT_LEXICON: &str = include_str!("../../resources/part_lexicon.tsv");

/// Ordered part names with the words that count as mentioning each one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartNameSet {
    names: Vec<String>,
    lexicon: Vec<BTreeSet<String>>,
}

impl PartNameSet {
    /// Each name is always part of its own lexicon.
    pub fn new(names: Vec<String>, synonyms: &[(String, String)]) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::invalid("a part name set needs at least two parts"));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::invalid("part names must be unique"));
        }
        let mut lexicon: Vec<BTreeSet<String>> = names.iter().map(|n| BTreeSet::from([n.clone()])).collect();
        for (word, part) in synonyms {
            // Synonyms for parts outside this set are ignored.
            if let Some(k) = names.iter().position(|n| n == part) {
                lexicon[k].insert(word.clone());
            }
        }
        Ok(Self { names, lexicon })
    }

    /// back, seat, leg, arm with the bundled synonym list.
    pub fn chair() -> Self {
        Self::with_builtin_lexicon(["back", "seat", "leg", "arm"].map(String::from).to_vec())
            .expect("builtin chair parts")
    }

    pub fn with_builtin_lexicon(names: Vec<String>) -> Result<Self> {
        let syn = parse_tsv(DEFAULT_LEXICON, "part_lexicon.tsv")?;
        Self::new(names, &syn)
    }

    pub fn with_lexicon_file(names: Vec<String>, path: &Path) -> Result<Self> {
        Self::new(names, &load_tsv(path)?)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn lexicon(&self, part: usize) -> &BTreeSet<String> {
        &self.lexicon[part]
    }

    /// The single part whose lexicon meets `tokens`; `None` when zero or
    /// several parts are mentioned.
    pub fn detect_mentioned_part<S: AsRef<str>>(&self, tokens: &[S]) -> Option<usize> {
        let mut found = None;
        for (k, words) in self.lexicon.iter().enumerate() {
            if tokens.iter().any(|t| words.contains(t.as_ref())) {
                if found.is_some() {
                    return None;
                }
                found = Some(k);
            }
        }
        found
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mention() {
        let p = PartNameSet::chair();
        assert_eq!(p.detect_mentioned_part(&["thick", "back"]), Some(0));
    }

    #[test]
    fn two_parts_filtered() {
        let p = PartNameSet::chair();
        assert_eq!(p.detect_mentioned_part(&["back", "and", "arm"]), None);
    }

    #[test]
    fn no_parts() {
        let p = PartNameSet::chair();
        assert_eq!(p.detect_mentioned_part(&["comfy", "one"]), None);
    }

    #[test]
    fn synonyms_count() {
        let p = PartNameSet::chair();
        assert_eq!(p.detect_mentioned_part(&["soft", "cushion"]), Some(1));
        // Repeated mentions of the same part are still one part.
        assert_eq!(p.detect_mentioned_part(&["leg", "foot"]), Some(2));
    }

    #[test]
    fn invalid_sets() {
        assert!(PartNameSet::new(vec!["a".into()], &[]).is_err());
        assert!(PartNameSet::new(vec!["a".into(), "a".into()], &[]).is_err());
    }
}
