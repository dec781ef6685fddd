//! Prepared dataset directory: `dataset.json`, `train.jsonl`, `val.jsonl`,
//! `test.jsonl` and `vocab.json`. The geometry stays in its bundle.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::SplitName;
use crate::error::{Error, Result};
use crate::experiment::Corpus;
use crate::geometry::{read_bundle, Bundle};
use crate::language::{read_rounds_jsonl, write_rounds_jsonl, GameRound, PartNameSet, Splits, Vocabulary};

pub const DATASET_FILE: &str = "dataset.json";
pub const VOCAB_FILE: &str = "vocab.json";
const FORMAT: &str = "partglot-dataset-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub format: String,
    /// Absolute bundle directory.
    pub bundle: PathBuf,
    pub category: String,
    pub part_names: Vec<String>,
    pub shape_disjoint: bool,
    pub seed: u64,
}

fn split_file(split: SplitName) -> &'static str {
    match split {
        SplitName::Train => "train.jsonl",
        SplitName::Val => "val.jsonl",
        SplitName::Test => "test.jsonl",
    }
}

impl PreparedDataset {
    pub fn new(
        bundle: &Path,
        category: &str,
        part_names: Vec<String>,
        shape_disjoint: bool,
        seed: u64,
    ) -> Result<Self> {
        let bundle = std::fs::canonicalize(bundle).map_err(|e| Error::io(bundle, e))?;
        Ok(Self {
            format: FORMAT.into(),
            bundle,
            category: category.to_string(),
            part_names,
            shape_disjoint,
            seed,
        })
    }

    pub fn write(&self, dir: &Path, splits: &Splits, vocab: &Vocabulary) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = dir.join(DATASET_FILE);
        std::fs::write(&meta, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&meta, e))?;
        write_rounds_jsonl(&dir.join(split_file(SplitName::Train)), &splits.train)?;
        write_rounds_jsonl(&dir.join(split_file(SplitName::Val)), &splits.val)?;
        write_rounds_jsonl(&dir.join(split_file(SplitName::Test)), &splits.test)?;
        let v = dir.join(VOCAB_FILE);
        std::fs::write(&v, vocab.save_json()?).map_err(|e| Error::io(&v, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta = dir.join(DATASET_FILE);
        let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        let d: Self = serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", meta.display())))?;
        if d.format != FORMAT {
            return Err(Error::invalid(format!(
                "{}: unknown format {}",
                meta.display(),
                d.format
            )));
        }
        Ok(d)
    }

    pub fn read_vocab(dir: &Path) -> Result<Vocabulary> {
        let v = dir.join(VOCAB_FILE);
        Vocabulary::load_json(&std::fs::read_to_string(&v).map_err(|e| Error::io(&v, e))?)
    }

    pub fn read_split(dir: &Path, split: SplitName) -> Result<Vec<GameRound>> {
        read_rounds_jsonl(&dir.join(split_file(split)))
    }

    pub fn read_bundle(&self) -> Result<Bundle> {
        let b = read_bundle(&self.bundle)?;
        if b.part_names != self.part_names {
            return Err(Error::invalid("bundle part names changed since preparation"));
        }
        Ok(b)
    }

    /// Loads bundle, splits and vocabulary. Mentioned parts were resolved at
    /// preparation time, so the builtin lexicon only names the parts here.
    pub fn load_corpus(dir: &Path) -> Result<Corpus> {
        let d = Self::read(dir)?;
        let bundle = d.read_bundle()?;
        let splits = Splits {
            train: Self::read_split(dir, SplitName::Train)?,
            val: Self::read_split(dir, SplitName::Val)?,
            test: Self::read_split(dir, SplitName::Test)?,
        };
        let rounds = splits
            .train
            .iter()
            .chain(&splits.val)
            .chain(&splits.test)
            .cloned()
            .collect();
        let parts = PartNameSet::with_builtin_lexicon(d.part_names.clone())?;
        let mut corpus = Corpus::with_splits(&d.category, parts, bundle.shapes, rounds, splits);
        corpus.vocab = Self::read_vocab(dir)?;
        Ok(corpus)
    }
}
