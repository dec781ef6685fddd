//! Glue for end-to-end runs: corpus assembly, training and scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::run::{
    classification_accuracy, part_templates, projected_segmentation_scores, segmentation_scores, upper_bound_scores,
};
use crate::eval::{IouAverageSet, SegmentationScores};
use crate::geometry::{generate_synthetic_shapes, split_segments_by_factor, ShapeCatalog, ShapeRecord};
use crate::language::{
    split_rounds, synthesize_reference_games, template_words, GameRound, PartNameSet, SplitRatios, Splits, TemplateSet,
    TextMaps, Vocabulary,
};
use crate::model::{AttentionBaseline, InputMode, Model};
use crate::train::{encode_rounds, train, Dataset, TrainConfig, TrainInputs};

/// Shapes, rounds, splits and vocabulary of one category.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub category: String,
    pub parts: PartNameSet,
    pub shapes: Vec<ShapeRecord>,
    pub rounds: Vec<GameRound>,
    pub splits: Splits,
    pub vocab: Vocabulary,
}

impl Corpus {
    /// Splits rounds at the round level and builds the vocabulary.
    pub fn new(
        category: &str,
        parts: PartNameSet,
        shapes: Vec<ShapeRecord>,
        rounds: Vec<GameRound>,
        seed: u64,
    ) -> Result<Self> {
        let splits = split_rounds(&rounds, SplitRatios::default(), seed)?;
        Ok(Self::with_splits(category, parts, shapes, rounds, splits))
    }

    /// Builds the vocabulary from the training utterances plus the template
    /// query words.
    pub fn with_splits(
        category: &str,
        parts: PartNameSet,
        shapes: Vec<ShapeRecord>,
        rounds: Vec<GameRound>,
        splits: Splits,
    ) -> Self {
        let vocab = build_vocabulary(&splits.train, parts.names(), category);
        Self {
            category: category.to_string(),
            parts,
            shapes,
            rounds,
            splits,
            vocab,
        }
    }

    /// Synthetic chairs with template reference games.
    pub fn synthetic(num_shapes: usize, num_rounds: usize, seed: u64) -> Result<Self> {
        let catalog = ShapeCatalog::chair();
        let shapes = generate_synthetic_shapes(&catalog, num_shapes, seed)?;
        let parts = PartNameSet::chair();
        let rounds = synthesize_reference_games(
            &shapes,
            &parts,
            &TemplateSet::default(),
            &TextMaps::builtin(),
            num_rounds,
            seed.wrapping_add(1),
        )?;
        Self::new(&catalog.category, parts, shapes, rounds, seed.wrapping_add(2))
    }

    /// Same corpus with every super-segment split into `factor` clusters.
    pub fn with_granularity(&self, factor: usize, seed: u64) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("granularity factor must be at least 1"));
        }
        let shapes = self
            .shapes
            .iter()
            .map(|s| {
                let segments = split_segments_by_factor(&s.segments, &s.cloud, factor, seed)?;
                Ok(ShapeRecord { segments, ..s.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { shapes, ..self.clone() })
    }

    pub fn dataset(&self, cfg: &TrainConfig) -> Result<Dataset> {
        Dataset::new(&self.shapes, cfg.input_mode)
    }

    pub fn test_shape_ids(&self, data: &Dataset) -> Vec<String> {
        data.labeled_ids_in(&self.splits.test)
    }
}

pub fn build_vocabulary(train: &[GameRound], part_names: &[String], category: &str) -> Vocabulary {
    let templates: Vec<Vec<String>> = part_names.iter().map(|p| template_words(p, category)).collect();
    let sentences = train
        .iter()
        .map(|r| r.utterance.words.as_slice())
        .chain(templates.iter().map(Vec::as_slice));
    Vocabulary::build(sentences, 1)
}

/// Scores of one trained run on the test split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub accuracy: f64,
    pub uniform_accuracy: f64,
    pub random_accuracy: f64,
    pub segmentation: SegmentationScores,
    pub upper_bound: SegmentationScores,
}

/// Trains on the corpus and scores the test split.
pub fn train_and_evaluate(corpus: &Corpus, cfg: &TrainConfig) -> Result<(Model<f32>, RunSummary)> {
    let data = corpus.dataset(cfg)?;
    let inputs = TrainInputs {
        dataset: &data,
        vocab: &corpus.vocab,
        part_names: corpus.parts.names(),
        category: &corpus.category,
        train: &corpus.splits.train,
        val: &corpus.splits.val,
    };
    let outcome = train(cfg, &inputs, None)?;
    let summary = evaluate(&outcome.model, corpus, &data, cfg.iou_average_set, cfg.seed)?;
    Ok((outcome.model, summary))
}

pub fn evaluate(
    model: &Model<f32>,
    corpus: &Corpus,
    data: &Dataset,
    set: IouAverageSet,
    seed: u64,
) -> Result<RunSummary> {
    let test: Vec<GameRound> = corpus
        .splits
        .test
        .iter()
        .filter(|r| r.utterance.mentioned_part.is_some())
        .cloned()
        .collect();
    let rounds = encode_rounds(&test, data, &corpus.vocab, model.config.max_utterance_len)?;
    let templates = part_templates(corpus.parts.names(), &corpus.category, &corpus.vocab);
    let ids = corpus.test_shape_ids(data);
    // The upper bound is a property of the super-segments, so it is always
    // computed on the super-segment partition.
    let seg_data = Dataset::new(&corpus.shapes, InputMode::SuperSegments)?;
    // Raw-point predictions are projected onto the super-segments.
    let segmentation = match model.config.input_mode {
        InputMode::SuperSegments => segmentation_scores(model, data, &ids, &templates, set)?,
        InputMode::RawPoints => projected_segmentation_scores(model, data, &seg_data, &ids, &templates, set)?,
    };
    Ok(RunSummary {
        accuracy: classification_accuracy(model, data, &rounds, None)?,
        uniform_accuracy: classification_accuracy(model, data, &rounds, Some((AttentionBaseline::Uniform, seed)))?,
        random_accuracy: classification_accuracy(model, data, &rounds, Some((AttentionBaseline::Random, seed)))?,
        segmentation,
        upper_bound: upper_bound_scores(&seg_data, &ids, corpus.parts.len(), set)?,
    })
}
