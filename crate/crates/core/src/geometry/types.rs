use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points per cloud fed to the model.
pub const CLOUD_SIZE: usize = 2048;
/// Maximum points kept per super-segment for the segment encoder.
pub const SEGMENT_POINT_CAP: usize = 512;

pub type Point = [f32; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Clouds entering the model must have exactly [`CLOUD_SIZE`] points.
    pub fn check_model_input(&self) -> Result<()> {
        if self.points.len() != CLOUD_SIZE {
            return Err(Error::invalid(format!(
                "model input cloud has {} points, expected {CLOUD_SIZE}",
                self.points.len()
            )));
        }
        Ok(())
    }

    /// Translates and uniformly scales so the bounding box is centered at the
    /// origin with its longest side equal to 1.
    pub fn normalize_unit_cube(&mut self) {
        if self.points.is_empty() {
            return;
        }
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f32, f32::max);
        let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
        let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
        for p in &mut self.points {
            for a in 0..3 {
                p[a] = (p[a] - center[a]) * scale;
            }
        }
    }
}

/// Partition of a cloud into super-segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperSegmentSet {
    pub shape_id: String,
    /// Point index to segment index.
    pub assignment: Vec<u32>,
    pub num_segments: usize,
    /// Per-segment point indices after capping at [`SEGMENT_POINT_CAP`].
    pub per_segment_points: Vec<Vec<u32>>,
}

impl SuperSegmentSet {
    /// Builds the set from a compact assignment (every id in `0..S` used).
    /// Per-segment lists are capped with a seed derived from `seed` and the shape id.
    pub fn from_assignment(shape_id: &str, assignment: Vec<u32>, seed: u64) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::invalid("empty assignment"));
        }
        let num_segments = assignment.iter().max().map_or(0, |&m| m as usize + 1);
        let full = members(&assignment, num_segments);
        if let Some(s) = full.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("segment {s} of {shape_id} owns no points")));
        }
        let base = seed ^ fnv1a64(shape_id.as_bytes());
        let per_segment_points = full
            .iter()
            .enumerate()
            .map(|(s, pts)| subsample_segment(pts, SEGMENT_POINT_CAP, base.wrapping_add(s as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shape_id: shape_id.to_string(),
            assignment,
            num_segments,
            per_segment_points,
        })
    }

    /// Uncapped member lists, one per segment.
    pub fn full_members(&self) -> Vec<Vec<u32>> {
        members(&self.assignment, self.num_segments)
    }

    pub fn num_points(&self) -> usize {
        self.assignment.len()
    }

    pub fn validate(&self) -> Result<()> {
        let full = self.full_members();
        if full.len() != self.per_segment_points.len() {
            return Err(Error::invalid("per-segment list count differs from segment count"));
        }
        for (s, (all, capped)) in full.iter().zip(&self.per_segment_points).enumerate() {
            if all.is_empty() {
                return Err(Error::invalid(format!("segment {s} is empty")));
            }
            if capped.is_empty() || capped.len() > SEGMENT_POINT_CAP {
                return Err(Error::invalid(format!(
                    "segment {s} has {} capped points",
                    capped.len()
                )));
            }
            if capped.iter().any(|p| all.binary_search(p).is_err()) {
                return Err(Error::invalid(format!("segment {s} capped list is not a subset")));
            }
        }
        Ok(())
    }
}

fn members(assignment: &[u32], num_segments: usize) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new(); num_segments];
    for (i, &s) in assignment.iter().enumerate() {
        out[s as usize].push(i as u32);
    }
    out
}

/// Keeps `points` unchanged when it fits under `cap`, otherwise draws a
/// uniform subset of size `cap` (returned in input order).
pub fn subsample_segment(points: &[u32], cap: usize, seed: u64) -> Result<Vec<u32>> {
    if points.is_empty() {
        return Err(Error::invalid("cannot subsample an empty segment"));
    }
    if cap == 0 {
        return Err(Error::invalid("segment cap must be at least 1"));
    }
    if points.len() <= cap {
        return Ok(points.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, points.len(), cap).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| points[i]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartLabels {
    pub labels: Vec<u32>,
    pub part_names: Vec<String>,
}

impl PartLabels {
    pub fn new(labels: Vec<u32>, part_names: Vec<String>) -> Result<Self> {
        if let Some(i) = labels.iter().position(|&l| l as usize >= part_names.len()) {
            return Err(Error::invalid(format!(
                "label {} at point {i} is outside {} part names",
                labels[i],
                part_names.len()
            )));
        }
        Ok(Self { labels, part_names })
    }

    pub fn num_parts(&self) -> usize {
        self.part_names.len()
    }

    pub fn contains_part(&self, part: usize) -> bool {
        self.labels.iter().any(|&l| l as usize == part)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub id: String,
    pub category: String,
    pub cloud: PointCloud,
    pub segments: SuperSegmentSet,
    pub gt: Option<PartLabels>,
}

impl ShapeRecord {
    pub fn validate(&self) -> Result<()> {
        if self.segments.num_points() != self.cloud.len() {
            return Err(Error::invalid(format!(
                "shape {}: {} assignments for {} points",
                self.id,
                self.segments.num_points(),
                self.cloud.len()
            )));
        }
        if let Some(gt) = &self.gt {
            if gt.labels.len() != self.cloud.len() {
                return Err(Error::invalid(format!(
                    "shape {}: {} labels for {} points",
                    self.id,
                    gt.labels.len(),
                    self.cloud.len()
                )));
            }
        }
        self.segments.validate()
    }
}

/// 64-bit FNV-1a, used to derive stable per-shape seeds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
