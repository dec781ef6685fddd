//! Segmentation and classification metrics, baselines and reports.

pub mod iou;
pub mod run;

pub use iou::{
    cross_part_miou, instance_miou, majority_per_segment, part_iou, per_part_iou, point_projection_baseline,
    upper_bound_segmentation, IouAverageSet,
};
pub use run::{
    classification_accuracy, listener_probabilities, part_templates, projected_segmentation_scores,
    segmentation_scores, upper_bound_scores, SegmentationScores,
};
