use serde::{Deserialize, Serialize};

use super::types::{Point, PointCloud, SuperSegmentSet};
use crate::error::{Error, Result};

/// Plane `normal · p + offset = 0`; the inside is where the expression is negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl HalfSpace {
    pub fn signed_distance(&self, p: &Point) -> f64 {
        let n = &self.normal;
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let raw = n[0] * p[0] as f64 + n[1] * p[1] as f64 + n[2] * p[2] as f64 + self.offset;
        if len > 0.0 {
            raw / len
        } else {
            raw
        }
    }
}

/// Convex region given as an intersection of half-spaces (for example a
/// BSP-Net convex exported as its plane set).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convex {
    pub planes: Vec<HalfSpace>,
}

impl Convex {
    /// Max over plane signed distances; negative inside.
    pub fn signed_distance(&self, p: &Point) -> f64 {
        self.planes
            .iter()
            .map(|h| h.signed_distance(p))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SegmentGeometry {
    Convexes(Vec<Convex>),
    /// Fallback when no convex decomposition is available: each segment is a
    /// set of representative points and a point joins the nearest one.
    Representatives(Vec<Vec<Point>>),
}

impl SegmentGeometry {
    pub fn len(&self) -> usize {
        match self {
            SegmentGeometry::Convexes(c) => c.len(),
            SegmentGeometry::Representatives(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn distance(&self, segment: usize, p: &Point) -> f64 {
        match self {
            SegmentGeometry::Convexes(c) => c[segment].signed_distance(p),
            SegmentGeometry::Representatives(r) => r[segment]
                .iter()
                .map(|q| {
                    let d: f64 = (0..3).map(|a| (p[a] as f64 - q[a] as f64).powi(2)).sum();
                    d.sqrt()
                })
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Assigns every point to the segment at minimum distance (ties go to the
/// lower index), drops segments that receive no point and compacts indices.
pub fn assign_points_to_segments(
    shape_id: &str,
    cloud: &PointCloud,
    geometry: &SegmentGeometry,
    seed: u64,
) -> Result<SuperSegmentSet> {
    if cloud.is_empty() {
        return Err(Error::invalid(format!("shape {shape_id}: empty point cloud")));
    }
    if geometry.is_empty() {
        return Err(Error::invalid(format!("shape {shape_id}: no segment geometry")));
    }
    let raw: Option<Vec<usize>> = raw_assignment(cloud.points(), geometry).into_iter().collect();
    let Some(raw) = raw else {
        return Err(Error::DegenerateGeometry(format!(
            "shape {shape_id}: some points are at infinite distance from every segment"
        )));
    };
    let assignment = compact(&raw, geometry.len());
    SuperSegmentSet::from_assignment(shape_id, assignment, seed)
}

fn raw_assignment(points: &[Point], geometry: &SegmentGeometry) -> Vec<Option<usize>> {
    points
        .iter()
        .map(|p| {
            let mut best = None;
            let mut best_d = f64::INFINITY;
            for s in 0..geometry.len() {
                let d = geometry.distance(s, p);
                // NaN and +inf never win.
                if d < best_d {
                    best_d = d;
                    best = Some(s);
                }
            }
            best
        })
        .collect()
}

/// Renumbers used segment ids to `0..S'` preserving order.
pub(crate) fn compact(raw: &[usize], num_segments: usize) -> Vec<u32> {
    let mut remap = vec![u32::MAX; num_segments];
    let mut used = vec![false; num_segments];
    for &s in raw {
        used[s] = true;
    }
    let mut next = 0u32;
    for (s, u) in used.iter().enumerate() {
        if *u {
            remap[s] = next;
            next += 1;
        }
    }
    raw.iter().map(|&s| remap[s]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_split() -> SegmentGeometry {
        // Segment 0 is x <= 0, segment 1 is x >= 0.
        SegmentGeometry::Convexes(vec![
            Convex {
                planes: vec![HalfSpace {
                    normal: [1.0, 0.0, 0.0],
                    offset: 0.0,
                }],
            },
            Convex {
                planes: vec![HalfSpace {
                    normal: [-1.0, 0.0, 0.0],
                    offset: 0.0,
                }],
            },
        ])
    }

    #[test]
    fn single_segment_takes_everything() {
        let cloud = PointCloud::new(vec![[0.1, 0.2, 0.3], [-0.4, 0.0, 0.9], [0.0; 3]]).unwrap();
        let geo = SegmentGeometry::Representatives(vec![vec![[5.0, 5.0, 5.0]]]);
        let s = assign_points_to_segments("s", &cloud, &geo, 0).unwrap();
        assert_eq!(s.assignment, vec![0, 0, 0]);
        assert_eq!(s.num_segments, 1);
    }

    #[test]
    fn half_space_symmetry() {
        let cloud = PointCloud::new(vec![[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]]).unwrap();
        let s = assign_points_to_segments("s", &cloud, &axis_split(), 0).unwrap();
        assert_eq!(s.assignment, vec![0, 1]);
    }

    #[test]
    fn empty_segments_are_dropped_and_reindexed() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]).unwrap();
        let geo = SegmentGeometry::Representatives(vec![
            vec![[9.0, 9.0, 9.0]],
            vec![[0.0, 0.0, 0.0]],
            vec![[0.1, 0.0, 0.0]],
        ]);
        let s = assign_points_to_segments("s", &cloud, &geo, 0).unwrap();
        assert_eq!(s.assignment, vec![0, 1]);
        assert_eq!(s.num_segments, 2);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let s = assign_points_to_segments("s", &cloud, &axis_split(), 0).unwrap();
        assert_eq!(s.assignment, vec![0]);
    }

    #[test]
    fn error_paths() {
        let empty = PointCloud::new(vec![]).unwrap();
        assert!(matches!(
            assign_points_to_segments("s", &empty, &axis_split(), 0),
            Err(Error::InvalidInput(_))
        ));
        let cloud = PointCloud::new(vec![[0.0; 3]]).unwrap();
        assert!(assign_points_to_segments("s", &cloud, &SegmentGeometry::Convexes(vec![]), 0).is_err());
        let hollow = SegmentGeometry::Representatives(vec![vec![], vec![]]);
        assert!(matches!(
            assign_points_to_segments("s", &cloud, &hollow, 0),
            Err(Error::DegenerateGeometry(_))
        ));
    }
}
