//! IoU conventions, segment-level labelings and the upper bound.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PartLabels, SuperSegmentSet};
use crate::model::Segmentation;

/// Which parts enter the per-instance mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum IouAverageSet {
    /// All K parts; parts empty in both prediction and ground truth count as 1.
    #[default]
    AllParts,
    /// Only parts present in the prediction or the ground truth.
    PresentParts,
}

/// `|pred ∩ gt| / |pred ∪ gt|` for index sets given as sorted or unsorted
/// slices. Both empty gives 1; exactly one empty gives 0.
pub fn part_iou(pred: &[u32], gt: &[u32]) -> f64 {
    use std::collections::BTreeSet;
    let p: BTreeSet<u32> = pred.iter().copied().collect();
    let g: BTreeSet<u32> = gt.iter().copied().collect();
    let union = p.union(&g).count();
    if union == 0 {
        return 1.0;
    }
    p.intersection(&g).count() as f64 / union as f64
}

/// IoU of part `k` from per-point predictions and labels (same length).
pub fn label_iou(pred: &[usize], gt: &[u32], k: usize) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (a, b) = (p == k, g as usize == k);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn check_lengths(pred: &[usize], gt: &[u32]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labeled points",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Per-part IoU of one instance.
pub fn per_part_iou(pred: &[usize], gt: &[u32], num_parts: usize) -> Result<Vec<f64>> {
    check_lengths(pred, gt)?;
    Ok((0..num_parts).map(|k| label_iou(pred, gt, k)).collect())
}

/// Mean IoU of one instance under the chosen averaging set.
pub fn instance_miou(pred: &[usize], gt: &[u32], num_parts: usize, set: IouAverageSet) -> Result<f64> {
    let ious = per_part_iou(pred, gt, num_parts)?;
    let chosen: Vec<f64> = match set {
        IouAverageSet::AllParts => ious,
        IouAverageSet::PresentParts => (0..num_parts)
            .filter(|&k| pred.contains(&k) || gt.iter().any(|&g| g as usize == k))
            .map(|k| ious[k])
            .collect(),
    };
    if chosen.is_empty() {
        return Ok(1.0);
    }
    Ok(chosen.iter().sum::<f64>() / chosen.len() as f64)
}

/// Corpus average of IoU between predicted part `k` and gt part `k'` over
/// instances, for two possibly different partonomies.
pub fn cross_part_miou(
    preds: &[Vec<usize>],
    gts: &[Vec<u32>],
    num_pred_parts: usize,
    num_gt_parts: usize,
) -> Result<Vec<Vec<f64>>> {
    if preds.len() != gts.len() {
        return Err(Error::invalid("prediction and label counts differ"));
    }
    if preds.is_empty() {
        return Err(Error::invalid("cross-part mIoU needs at least one shape"));
    }
    let mut m = vec![vec![0.0; num_gt_parts]; num_pred_parts];
    for (p, g) in preds.iter().zip(gts) {
        check_lengths(p, g)?;
        for (k, row) in m.iter_mut().enumerate() {
            for (kg, cell) in row.iter_mut().enumerate() {
                let (mut inter, mut union) = (0usize, 0usize);
                for (&a, &b) in p.iter().zip(g) {
                    let (x, y) = (a == k, b as usize == kg);
                    inter += (x && y) as usize;
                    union += (x || y) as usize;
                }
                *cell += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            }
        }
    }
    let n = preds.len() as f64;
    m.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(m)
}

/// Majority vote per segment over `votes` (one part per point); ties go to
/// the lowest part index.
pub fn majority_per_segment(
    votes: &[usize],
    assignment: &[u32],
    num_segments: usize,
    num_parts: usize,
) -> Result<Vec<usize>> {
    if votes.len() != assignment.len() {
        return Err(Error::invalid(format!(
            "{} votes for {} assigned points",
            votes.len(),
            assignment.len()
        )));
    }
    let mut counts = vec![vec![0usize; num_parts]; num_segments];
    for (&v, &s) in votes.iter().zip(assignment) {
        if v >= num_parts || s as usize >= num_segments {
            return Err(Error::invalid(format!("vote {v} or segment {s} out of range")));
        }
        counts[s as usize][v] += 1;
    }
    Ok(counts
        .iter()
        .map(|c| {
            let mut best = 0;
            for k in 1..c.len() {
                if c[k] > c[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

fn expand(per_segment: Vec<usize>, segments: &SuperSegmentSet) -> Segmentation {
    let per_point = segments.assignment.iter().map(|&s| per_segment[s as usize]).collect();
    Segmentation { per_segment, per_point }
}

/// Each super-segment takes the majority ground-truth part of its points.
pub fn upper_bound_segmentation(segments: &SuperSegmentSet, gt: &PartLabels) -> Result<Segmentation> {
    let votes: Vec<usize> = gt.labels.iter().map(|&l| l as usize).collect();
    let per_segment = majority_per_segment(&votes, &segments.assignment, segments.num_segments, gt.num_parts())?;
    Ok(expand(per_segment, segments))
}

/// Each super-segment takes the majority of per-point predictions.
pub fn point_projection_baseline(
    point_predictions: &[usize],
    segments: &SuperSegmentSet,
    num_parts: usize,
) -> Result<Segmentation> {
    let per_segment = majority_per_segment(
        point_predictions,
        &segments.assignment,
        segments.num_segments,
        num_parts,
    )?;
    Ok(expand(per_segment, segments))
}

/// Fraction of points whose label matches.
pub fn point_accuracy(pred: &[usize], gt: &[u32]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(gt).filter(|(&p, &g)| p == g as usize).count() as f64 / pred.len() as f64
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn part_iou_conventions() {
        assert_eq!(part_iou(&[1, 2], &[1, 2]), 1.0);
        assert_eq!(part_iou(&[1], &[]), 0.0);
        assert_eq!(part_iou(&[], &[4]), 0.0);
        assert_eq!(part_iou(&[], &[]), 1.0);
        assert_abs_diff_eq!(part_iou(&[1, 2], &[2, 3]), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn instance_miou_conventions() {
        let gt = [0, 0, 1, 1];
        assert_eq!(
            instance_miou(&gt.map(|l| l as usize), &gt, 4, IouAverageSet::AllParts).unwrap(),
            1.0
        );
        // Part 3 is predicted on a point of part 1 but absent from the shape;
        // part 2 is empty in both and counts as 1.
        let gt = [0, 0, 1, 1, 1];
        let pred = [0, 0, 1, 1, 3];
        let ious = per_part_iou(&pred, &gt, 4).unwrap();
        assert_eq!(ious, vec![1.0, 2.0 / 3.0, 1.0, 0.0]);
        let m = instance_miou(&pred, &gt, 4, IouAverageSet::AllParts).unwrap();
        assert_abs_diff_eq!(m, (1.0 + 2.0 / 3.0 + 1.0 + 0.0) / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn two_perfect_one_empty_one_absent_is_three_quarters() {
        // Per-part IoUs (1, 1, 1, 0): the stray part-3 prediction sits on a
        // point whose gt part is outside the scored partonomy.
        let gt = [0, 0, 1, 1, 4];
        let pred = [0, 0, 1, 1, 3];
        let m = instance_miou(&pred, &gt, 4, IouAverageSet::AllParts).unwrap();
        assert_abs_diff_eq!(m, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn all_wrong_single_part() {
        let gt = [0, 0, 1, 1];
        let pred = [1, 1, 1, 1];
        let m = instance_miou(&pred, &gt, 2, IouAverageSet::AllParts).unwrap();
        let oracle = (part_iou(&[], &[0, 1]) + part_iou(&[0, 1, 2, 3], &[2, 3])) / 2.0;
        assert_abs_diff_eq!(m, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(m, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn present_parts_average() {
        let gt = [0, 0, 1, 1];
        let pred = [0, 0, 1, 1];
        assert_eq!(instance_miou(&pred, &gt, 4, IouAverageSet::PresentParts).unwrap(), 1.0);
        let pred = [1, 1, 1, 1];
        let m = instance_miou(&pred, &gt, 4, IouAverageSet::PresentParts).unwrap();
        assert_abs_diff_eq!(m, (0.0 + 0.5) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn upper_bound_majority() {
        let segs = SuperSegmentSet::from_assignment("s", vec![0, 0, 0, 0, 0, 1, 1], 0).unwrap();
        let gt = PartLabels::new(vec![1, 1, 1, 0, 0, 0, 0], vec!["a".into(), "b".into()]).unwrap();
        let ub = upper_bound_segmentation(&segs, &gt).unwrap();
        assert_eq!(ub.per_segment, vec![1, 0]);
        let aligned = SuperSegmentSet::from_assignment("s", vec![0, 0, 0, 1, 1, 1, 1], 0).unwrap();
        let ub = upper_bound_segmentation(&aligned, &gt).unwrap();
        assert_eq!(
            instance_miou(&ub.per_point, &gt.labels, 2, IouAverageSet::AllParts).unwrap(),
            1.0
        );
    }

    #[test]
    fn projection_votes() {
        let segs = SuperSegmentSet::from_assignment("s", vec![0, 0, 0, 0, 1, 1], 0).unwrap();
        let p = point_projection_baseline(&[2, 2, 2, 1, 3, 1], &segs, 4).unwrap();
        assert_eq!(p.per_segment, vec![2, 1]);
        assert_eq!(p.per_point, vec![2, 2, 2, 2, 1, 1]);
    }

    #[test]
    fn cross_part_diagonal_matches_per_part() {
        let preds = [vec![0, 0, 1, 1], vec![0, 1, 1, 1]];
        let gts = [vec![0, 0, 1, 1], vec![0, 0, 1, 1]];
        let m = cross_part_miou(&preds, &gts, 2, 2).unwrap();
        for (k, row) in m.iter().enumerate() {
            let mean = preds.iter().zip(&gts).map(|(p, g)| label_iou(p, g, k)).sum::<f64>() / 2.0;
            assert_abs_diff_eq!(row[k], mean, epsilon = 1e-12);
        }
        // Disjoint pairs.
        assert_eq!(m[0][1], 0.0);
    }

    proptest! {
        #[test]
        fn iou_symmetry_and_range(p in proptest::collection::vec(0usize..3, 1..30), seed in 0u64..100) {
            let gt: Vec<u32> = p.iter().enumerate().map(|(i, _)| ((i as u64 * 7 + seed) % 3) as u32).collect();
            let m = instance_miou(&p, &gt, 3, IouAverageSet::AllParts).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
            let a: Vec<u32> = p.iter().enumerate().filter(|(_, &v)| v == 0).map(|(i, _)| i as u32).collect();
            let b: Vec<u32> = gt.iter().enumerate().filter(|(_, &v)| v == 0).map(|(i, _)| i as u32).collect();
            prop_assert_eq!(part_iou(&a, &b), part_iou(&b, &a));
        }
    }
}
