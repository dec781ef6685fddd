use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::assign::compact;
use super::types::{Point, PointCloud, SuperSegmentSet};
use crate::error::{Error, Result};

const MAX_ITERS: usize = 50;
const TOLERANCE: f64 = 1e-6;

fn dist2(a: &[f64; 3], p: &Point) -> f64 {
    (0..3).map(|k| (a[k] - p[k] as f64).powi(2)).sum()
}

/// Lloyd's K-means on `points`, returning a cluster label per point in `0..k'`
/// with `k' <= k` (clusters that end up empty are dropped).
///
/// The first center is drawn from the seed; each further center is the
/// point farthest from the centers chosen so far.
pub fn kmeans(points: &[Point], k: usize, seed: u64) -> Vec<u32> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k.clamp(1, n);
    if k == 1 {
        return vec![0; n];
    }
    if k == n {
        return (0..n as u32).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);
    let to_f64 = |p: &Point| [p[0] as f64, p[1] as f64, p[2] as f64];
    let mut centers = vec![to_f64(&points[first])];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(&centers[0], p)).collect();
    while centers.len() < k {
        let (far, _) = nearest
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, bd), (i, &d)| if d > bd { (i, d) } else { (bi, bd) });
        let c = to_f64(&points[far]);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist2(&c, p));
        }
        centers.push(c);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        for (l, p) in labels.iter_mut().zip(points) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let d = dist2(c, p);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            *l = best;
        }
        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            for a in 0..3 {
                sums[l][a] += p[a] as f64;
            }
            counts[l] += 1;
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let new = [
                sums[j][0] / counts[j] as f64,
                sums[j][1] / counts[j] as f64,
                sums[j][2] / counts[j] as f64,
            ];
            let d: f64 = (0..3).map(|a| (new[a] - centers[j][a]).powi(2)).sum();
            shift = shift.max(d.sqrt());
            centers[j] = new;
        }
        if shift < TOLERANCE {
            break;
        }
    }
    compact(&labels, k)
}

/// Number of clusters for a segment of `size` points at granularity `n`.
pub fn clusters_for(size: usize, n: usize) -> usize {
    ((size as f64 / n as f64).round() as usize).clamp(1, size.max(1))
}

/// Replaces every segment with `max(1, round(|P_i| / n))` K-means clusters of its
/// own points. Points from different input segments are never merged.
/// `n = 1` gives one segment per point.
pub fn split_by_granularity(
    segments: &SuperSegmentSet,
    cloud: &PointCloud,
    n: usize,
    seed: u64,
) -> Result<SuperSegmentSet> {
    if n < 1 {
        return Err(Error::invalid("granularity must be at least 1 point per cluster"));
    }
    split_with(segments, cloud, seed, |size| clusters_for(size, n))
}

/// Replaces every segment with `min(factor, |P_i|)` K-means clusters, which
/// multiplies the segment count by `factor` when segments are large enough.
pub fn split_segments_by_factor(
    segments: &SuperSegmentSet,
    cloud: &PointCloud,
    factor: usize,
    seed: u64,
) -> Result<SuperSegmentSet> {
    if factor < 1 {
        return Err(Error::invalid("split factor must be at least 1"));
    }
    split_with(segments, cloud, seed, |size| factor.min(size.max(1)))
}

fn split_with(
    segments: &SuperSegmentSet,
    cloud: &PointCloud,
    seed: u64,
    clusters: impl Fn(usize) -> usize,
) -> Result<SuperSegmentSet> {
    if segments.num_points() != cloud.len() {
        return Err(Error::invalid("segment assignment does not match the cloud"));
    }
    let mut assignment = vec![0u32; cloud.len()];
    let mut next = 0u32;
    for (s, members) in segments.full_members().iter().enumerate() {
        let pts: Vec<Point> = members.iter().map(|&i| cloud.points()[i as usize]).collect();
        let labels = kmeans(&pts, clusters(pts.len()), seed.wrapping_add(s as u64));
        let used = labels.iter().max().map_or(0, |&m| m + 1);
        for (&i, &l) in members.iter().zip(&labels) {
            assignment[i as usize] = next + l;
        }
        next += used;
    }
    SuperSegmentSet::from_assignment(&segments.shape_id, assignment, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_cloud(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| [i as f32 / n as f32, 0.0, 0.0]).collect()).unwrap()
    }

    fn one_segment(n: usize) -> SuperSegmentSet {
        SuperSegmentSet::from_assignment("t", vec![0; n], 0).unwrap()
    }

    #[test]
    fn k_equal_one_is_identity() {
        let cloud = line_cloud(100);
        let out = split_by_granularity(&one_segment(100), &cloud, 100, 0).unwrap();
        assert_eq!(out.num_segments, 1);
        assert_eq!(out.assignment, vec![0; 100]);
    }

    #[test]
    fn halving_granularity_gives_two_clusters() {
        let cloud = line_cloud(100);
        let out = split_by_granularity(&one_segment(100), &cloud, 50, 0).unwrap();
        assert_eq!(out.num_segments, 2);
        out.validate().unwrap();
        // A line splits into its two halves.
        assert!(out.assignment[..50].iter().all(|&a| a == out.assignment[0]));
        assert!(out.assignment[50..].iter().all(|&a| a == out.assignment[99]));
    }

    #[test]
    fn per_point_extreme() {
        let cloud = line_cloud(64);
        let segs = SuperSegmentSet::from_assignment("t", (0..64).map(|i| (i / 16) as u32).collect(), 0).unwrap();
        let out = split_by_granularity(&segs, &cloud, 1, 0).unwrap();
        assert_eq!(out.num_segments, 64);
    }

    #[test]
    fn zero_granularity_rejected() {
        let cloud = line_cloud(4);
        assert!(split_by_granularity(&one_segment(4), &cloud, 0, 0).is_err());
    }

    #[test]
    fn factor_split_multiplies_segment_count() {
        let cloud = line_cloud(64);
        let segs = SuperSegmentSet::from_assignment("t", (0..64).map(|i| (i / 16) as u32).collect(), 0).unwrap();
        let out = split_segments_by_factor(&segs, &cloud, 4, 0).unwrap();
        assert_eq!(out.num_segments, 16);
        // Never merges across input segments.
        for (i, &a) in out.assignment.iter().enumerate() {
            let j = out.assignment.iter().position(|&b| b == a).unwrap();
            assert_eq!(i / 16, j / 16);
        }
        assert!(split_segments_by_factor(&segs, &cloud, 0, 0).is_err());
    }

    #[test]
    fn kmeans_is_deterministic() {
        let cloud = line_cloud(300);
        assert_eq!(kmeans(cloud.points(), 7, 3), kmeans(cloud.points(), 7, 3));
    }

    proptest::proptest! {
        #[test]
        fn factor_split_refines_the_partition(
            pts in proptest::collection::vec((-1.0f32..1.0, -1.0f32..1.0, -1.0f32..1.0), 1..80),
            raw in proptest::collection::vec(0u32..5, 80),
            factor in 1usize..6,
            seed in 0u64..50,
        ) {
            let n = pts.len();
            let cloud = PointCloud::new(pts.iter().map(|&(x, y, z)| [x, y, z]).collect()).unwrap();
            // Relabel to contiguous ids so every segment is non-empty.
            let mut ids = std::collections::BTreeMap::new();
            let assignment: Vec<u32> = raw[..n].iter().map(|&a| { let next = ids.len() as u32; *ids.entry(a).or_insert(next) }).collect();
            let segs = SuperSegmentSet::from_assignment("t", assignment.clone(), 0).unwrap();
            let out = split_segments_by_factor(&segs, &cloud, factor, seed).unwrap();
            out.validate().unwrap();
            let expected: usize = (0..ids.len() as u32)
                .map(|j| assignment.iter().filter(|&&a| a == j).count().min(factor))
                .sum();
            proptest::prop_assert_eq!(out.num_segments, expected);
            // Every new segment sits inside one old segment.
            let mut parent = vec![None; out.num_segments];
            for (&new, &old) in out.assignment.iter().zip(&assignment) {
                let p = parent[new as usize].get_or_insert(old);
                proptest::prop_assert_eq!(*p, old);
            }
        }
    }
}
