//! mIoU conventions, the super-segment upper bound and point projection.
//!
//! cargo run --release --example iou_metrics

use partglot::eval::{instance_miou, part_iou, point_projection_baseline, upper_bound_segmentation, IouAverageSet};
use partglot::geometry::{PartLabels, SuperSegmentSet};

fn main() -> partglot::Result<()> {
    println!("IoU({{1,2}}, {{2,3}}) = {:.4}", part_iou(&[1, 2], &[2, 3]));
    println!("IoU({{1}}, {{}})      = {}", part_iou(&[1], &[]));
    println!("IoU({{}}, {{}})       = {}", part_iou(&[], &[]));

    // Eight points, parts 0 and 1 present, part 2 predicted but absent, part 3 absent everywhere.
    let gt = PartLabels::new(
        vec![0, 0, 0, 0, 1, 1, 1, 1],
        ["a", "b", "c", "d"].map(String::from).to_vec(),
    )?;
    let pred = [0, 0, 0, 0, 1, 1, 1, 2];
    for set in [IouAverageSet::AllParts, IouAverageSet::PresentParts] {
        println!("{set:?} mIoU = {:.4}", instance_miou(&pred, &gt.labels, 4, set)?);
    }

    // Two super-segments, the second straddling both parts 3 to 1.
    let segs = SuperSegmentSet::from_assignment("toy", vec![0, 0, 0, 1, 1, 1, 1, 0], 0)?;
    let ub = upper_bound_segmentation(&segs, &gt)?;
    println!(
        "upper bound per segment {:?}, mIoU {:.4}",
        ub.per_segment,
        instance_miou(&ub.per_point, &gt.labels, 4, IouAverageSet::AllParts)?
    );

    let point_votes = [1, 1, 0, 1, 1, 1, 0, 0];
    let proj = point_projection_baseline(&point_votes, &segs, 4)?;
    println!("projected per segment {:?}", proj.per_segment);
    Ok(())
}
