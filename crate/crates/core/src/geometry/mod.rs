//! Point clouds, super-segment partitions and the on-disk dataset bundle.

pub mod assign;
pub mod bundle;
pub mod kmeans;
pub mod synth;
pub mod types;

pub use assign::{assign_points_to_segments, Convex, HalfSpace, SegmentGeometry};
pub use bundle::{read_bundle, write_bundle, Bundle};
pub use kmeans::{kmeans, split_by_granularity, split_segments_by_factor};
pub use synth::{generate_synthetic_shapes, PartSpec, PrimitiveKind, PrimitiveSpec, ShapeCatalog};
pub use types::{
    subsample_segment, PartLabels, Point, PointCloud, ShapeRecord, SuperSegmentSet, CLOUD_SIZE, SEGMENT_POINT_CAP,
};
