//! Running a model over shapes and rounds to produce scores.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::iou::{
    cross_part_miou, instance_miou, per_part_iou, point_projection_baseline, upper_bound_segmentation, IouAverageSet,
};
use crate::error::{Error, Result};
use crate::language::{template_query, Vocabulary};
use crate::model::{AttentionBaseline, Model, PreparedShape, RoundInput, Segmentation};
use crate::nn::Real;
use crate::train::data::localize;
use crate::train::Dataset;

const EVAL_BATCH: usize = 64;

/// Template query token ids, one per part.
pub fn part_templates(part_names: &[String], category: &str, vocab: &Vocabulary) -> Vec<Vec<u32>> {
    part_names.iter().map(|p| template_query(p, category, vocab)).collect()
}

/// Listener probabilities for every round, batched.
pub fn listener_probabilities<F: Real>(
    model: &Model<F>,
    data: &Dataset,
    rounds: &[RoundInput],
    baseline: Option<(AttentionBaseline, u64)>,
) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::with_capacity(rounds.len());
    for chunk in rounds.chunks(EVAL_BATCH) {
        let refs: Vec<&RoundInput> = chunk.iter().collect();
        let (unique, local) = localize(&refs);
        let shapes: Vec<&PreparedShape> = unique.iter().map(|&j| &data.shapes[j]).collect();
        out.extend(model.predict_with(&shapes, &local, baseline)?);
    }
    Ok(out)
}

/// Fraction of rounds whose most probable candidate is the target
/// (ties resolved to the lowest candidate index).
pub fn accuracy_from_probabilities(probs: &[[f64; 3]], rounds: &[RoundInput]) -> f64 {
    if rounds.is_empty() {
        return 0.0;
    }
    let hits = probs
        .iter()
        .zip(rounds)
        .filter(|(p, r)| {
            let best = (0..3).fold(0, |b, c| if p[c] > p[b] { c } else { b });
            best == r.target
        })
        .count();
    hits as f64 / rounds.len() as f64
}

pub fn classification_accuracy<F: Real>(
    model: &Model<F>,
    data: &Dataset,
    rounds: &[RoundInput],
    baseline: Option<(AttentionBaseline, u64)>,
) -> Result<f64> {
    let probs = listener_probabilities(model, data, rounds, baseline)?;
    Ok(accuracy_from_probabilities(&probs, rounds))
}

/// Per-shape and corpus-level segmentation scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SegmentationScores {
    pub shape_ids: Vec<String>,
    pub per_shape_miou: Vec<f64>,
    /// Corpus mean of each part's IoU.
    pub per_part: Vec<f64>,
    /// Mean of per-instance mIoU.
    pub average: f64,
}

impl SegmentationScores {
    pub fn from_predictions(
        ids: Vec<String>,
        preds: &[Vec<usize>],
        gts: &[&[u32]],
        num_parts: usize,
        set: IouAverageSet,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("no labeled shapes to score"));
        }
        let mut per_part = vec![0.0; num_parts];
        let mut per_shape = Vec::with_capacity(ids.len());
        for (p, g) in preds.iter().zip(gts) {
            for (acc, v) in per_part.iter_mut().zip(per_part_iou(p, g, num_parts)?) {
                *acc += v;
            }
            per_shape.push(instance_miou(p, g, num_parts, set)?);
        }
        let n = ids.len() as f64;
        per_part.iter_mut().for_each(|v| *v /= n);
        Ok(Self {
            average: per_shape.iter().sum::<f64>() / n,
            shape_ids: ids,
            per_shape_miou: per_shape,
            per_part,
        })
    }
}

fn labeled<'a>(data: &'a Dataset, ids: &[String]) -> Result<Vec<(usize, &'a [u32])>> {
    ids.iter()
        .map(|id| {
            let j = data.get(id)?;
            let gt = data.gt[j]
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("shape {id} has no ground-truth labels")))?;
            Ok((j, gt.labels.as_slice()))
        })
        .collect()
}

/// Model segmentations of the given shapes.
pub fn segment_shapes<F: Real>(
    model: &Model<F>,
    data: &Dataset,
    ids: &[String],
    templates: &[Vec<u32>],
) -> Result<Vec<Segmentation>> {
    ids.iter()
        .map(|id| model.segment_shape(&data.shapes[data.get(id)?], templates))
        .collect()
}

pub fn segmentation_scores<F: Real>(
    model: &Model<F>,
    data: &Dataset,
    ids: &[String],
    templates: &[Vec<u32>],
    set: IouAverageSet,
) -> Result<SegmentationScores> {
    let lab = labeled(data, ids)?;
    let segs = segment_shapes(model, data, ids, templates)?;
    let preds: Vec<Vec<usize>> = segs.into_iter().map(|s| s.per_point).collect();
    let gts: Vec<&[u32]> = lab.iter().map(|(_, g)| *g).collect();
    SegmentationScores::from_predictions(ids.to_vec(), &preds, &gts, model.config.num_parts(), set)
}

/// Scores of a raw-points model after projecting its per-point predictions
/// onto the super-segments of `segments` by majority vote.
pub fn projected_segmentation_scores<F: Real>(
    model: &Model<F>,
    points: &Dataset,
    segments: &Dataset,
    ids: &[String],
    templates: &[Vec<u32>],
    set: IouAverageSet,
) -> Result<SegmentationScores> {
    let lab = labeled(segments, ids)?;
    let k = model.config.num_parts();
    let mut preds = Vec::with_capacity(ids.len());
    for (seg, &(j, _)) in segment_shapes(model, points, ids, templates)?.into_iter().zip(&lab) {
        preds.push(point_projection_baseline(&seg.per_point, &segments.shapes[j].segment_set(), k)?.per_point);
    }
    let gts: Vec<&[u32]> = lab.iter().map(|(_, g)| *g).collect();
    SegmentationScores::from_predictions(ids.to_vec(), &preds, &gts, k, set)
}

/// Scores of the gt-majority labeling of each shape's super-segments.
pub fn upper_bound_scores(
    data: &Dataset,
    ids: &[String],
    num_parts: usize,
    set: IouAverageSet,
) -> Result<SegmentationScores> {
    let lab = labeled(data, ids)?;
    let mut preds = Vec::with_capacity(ids.len());
    for &(j, _) in &lab {
        let gt = data.gt[j].as_ref().expect("labeled");
        preds.push(upper_bound_segmentation(&data.shapes[j].segment_set(), gt)?.per_point);
    }
    let gts: Vec<&[u32]> = lab.iter().map(|(_, g)| *g).collect();
    SegmentationScores::from_predictions(ids.to_vec(), &preds, &gts, num_parts, set)
}

/// Predicted parts of `model` against another dataset's gt partonomy.
pub fn cross_part_matrix<F: Real>(
    model: &Model<F>,
    data: &Dataset,
    ids: &[String],
    templates: &[Vec<u32>],
    num_gt_parts: usize,
) -> Result<Vec<Vec<f64>>> {
    let lab = labeled(data, ids)?;
    let preds: Vec<Vec<usize>> = segment_shapes(model, data, ids, templates)?
        .into_iter()
        .map(|s| s.per_point)
        .collect();
    let gts: Vec<Vec<u32>> = lab.iter().map(|(_, g)| g.to_vec()).collect();
    cross_part_miou(&preds, &gts, model.config.num_parts(), num_gt_parts)
}
