use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_TYPOS: &str = include_str!("../../resources/typos.tsv");
const DEFAULT_COMPOUNDS: &str = include_str!("../../resources/compounds.tsv");
const DEFAULT_PLURALS: &str = include_str!("../../resources/plurals.tsv");

/// Parses a UTF-8 two-column TSV. Blank lines and `#` comments are skipped.
pub fn parse_tsv(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), None) if !a.trim().is_empty() && !b.trim().is_empty() => {
                out.push((a.trim().to_lowercase(), b.trim().to_lowercase()))
            }
            _ => {
                return Err(Error::invalid(format!(
                    "{source}:{}: expected two tab-separated columns",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn load_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, &path.display().to_string())
}

/// Lookup tables applied during preprocessing: typo fixes, compound splits,
/// plural-to-singular.
#[derive(Clone, Debug, Default)]
pub struct TextMaps {
    pub typos: HashMap<String, String>,
    pub compounds: HashMap<String, Vec<String>>,
    pub plurals: HashMap<String, String>,
}

impl TextMaps {
    pub fn from_pairs(
        typos: Vec<(String, String)>,
        compounds: Vec<(String, String)>,
        plurals: Vec<(String, String)>,
    ) -> Self {
        Self {
            typos: typos.into_iter().collect(),
            compounds: compounds
                .into_iter()
                .map(|(k, v)| (k, v.split_whitespace().map(str::to_string).collect()))
                .collect(),
            plurals: plurals.into_iter().collect(),
        }
    }

    /// The lists shipped in `resources/`.
    pub fn builtin() -> Self {
        let parse = |t, n| parse_tsv(t, n).expect("bundled resource parses");
        Self::from_pairs(
            parse(DEFAULT_TYPOS, "typos.tsv"),
            parse(DEFAULT_COMPOUNDS, "compounds.tsv"),
            parse(DEFAULT_PLURALS, "plurals.tsv"),
        )
    }

    /// Loads each map from a file when given, falling back to the builtin list.
    pub fn load(typos: Option<&Path>, compounds: Option<&Path>, plurals: Option<&Path>) -> Result<Self> {
        let builtin = |t, n| parse_tsv(t, n);
        Ok(Self::from_pairs(
            typos.map_or_else(|| builtin(DEFAULT_TYPOS, "typos.tsv"), load_tsv)?,
            compounds.map_or_else(|| builtin(DEFAULT_COMPOUNDS, "compounds.tsv"), load_tsv)?,
            plurals.map_or_else(|| builtin(DEFAULT_PLURALS, "plurals.tsv"), load_tsv)?,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preprocessed {
    pub tokens: Vec<String>,
    /// Set when nothing survived preprocessing.
    pub empty: bool,
}

/// Lowercases, strips punctuation, then applies typo, compound and plural
/// maps in that order.
pub fn preprocess_utterance(raw: &str, maps: &TextMaps) -> Preprocessed {
    let cleaned: String = raw
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let mut tokens = Vec::new();
    for word in cleaned.split_whitespace() {
        let word = maps.typos.get(word).map_or(word, String::as_str);
        match maps.compounds.get(word) {
            Some(parts) => tokens.extend(parts.iter().cloned()),
            None => tokens.push(word.to_string()),
        }
    }
    for t in &mut tokens {
        if let Some(s) = maps.plurals.get(t.as_str()) {
            *t = s.clone();
        }
    }
    Preprocessed {
        empty: tokens.is_empty(),
        tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compound_split() {
        let p = preprocess_utterance("armrest", &TextMaps::builtin());
        assert_eq!(p.tokens, vec!["arm", "rest"]);
    }

    #[test]
    fn plural_map_applies() {
        let maps = TextMaps::from_pairs(vec![], vec![], vec![("legs".into(), "leg".into())]);
        assert_eq!(preprocess_utterance("legs", &maps).tokens, vec!["leg"]);
    }

    #[test]
    fn empty_input_is_flagged() {
        let p = preprocess_utterance("", &TextMaps::builtin());
        assert!(p.tokens.is_empty());
        assert!(p.empty);
        assert!(preprocess_utterance("?!", &TextMaps::builtin()).empty);
    }

    #[test]
    fn typo_then_compound_then_plural() {
        let maps = TextMaps::from_pairs(
            vec![("armrst".into(), "armrests".into())],
            vec![("armrests".into(), "arm rests".into())],
            vec![("rests".into(), "rest".into())],
        );
        assert_eq!(preprocess_utterance("Armrst!", &maps).tokens, vec!["arm", "rest"]);
    }

    #[test]
    fn punctuation_and_case() {
        let p = preprocess_utterance("The THICK back, not legs.", &TextMaps::builtin());
        assert_eq!(p.tokens, vec!["the", "thick", "back", "not", "leg"]);
    }

    #[test]
    fn malformed_tsv_reports_line() {
        let err = parse_tsv("a\tb\nbroken\n", "x.tsv").unwrap_err();
        assert!(err.to_string().contains("x.tsv:2"));
    }
}
