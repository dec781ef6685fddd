//! Dataset bundle: a directory holding `manifest.json`, `points.bin`,
//! `segments.bin` and optionally `labels.bin`.
//!
//! Every `.bin` file starts with the magic `PGB1`, followed by one record per
//! shape in manifest order (all values little-endian):
//!
//! - `points.bin`: `u32 N`, then `N × 3` f32 coordinates
//! - `segments.bin`: `u32 S`, then `N` u32 segment ids
//! - `labels.bin`: `N` u32 part ids
//!
//! The manifest stores each record's byte offset in every file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{PartLabels, PointCloud, ShapeRecord, SuperSegmentSet};
use crate::error::{Error, Result};
use crate::nn::params::ByteCursor;

pub const BUNDLE_MAGIC: &[u8; 4] = b"PGB1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const POINTS_FILE: &str = "points.bin";
pub const SEGMENTS_FILE: &str = "segments.bin";
pub const LABELS_FILE: &str = "labels.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub category: String,
    pub num_points: u32,
    pub num_segments: u32,
    pub points_offset: u64,
    pub segments_offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_offset: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub part_names: Vec<String>,
    /// Seed for the per-segment point cap, so reloading reproduces the capped lists.
    pub subsample_seed: u64,
    pub shapes: Vec<ManifestEntry>,
}

/// In-memory bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub part_names: Vec<String>,
    pub subsample_seed: u64,
    pub shapes: Vec<ShapeRecord>,
}

impl Bundle {
    pub fn new(part_names: Vec<String>, subsample_seed: u64, shapes: Vec<ShapeRecord>) -> Self {
        Self {
            part_names,
            subsample_seed,
            shapes,
        }
    }

    pub fn shape(&self, id: &str) -> Option<&ShapeRecord> {
        self.shapes.iter().find(|s| s.id == id)
    }

    pub fn has_labels(&self) -> bool {
        !self.shapes.is_empty() && self.shapes.iter().all(|s| s.gt.is_some())
    }
}

pub fn write_bundle(dir: &Path, bundle: &Bundle) -> Result<()> {
    let with_labels = bundle.has_labels();
    if !with_labels && bundle.shapes.iter().any(|s| s.gt.is_some()) {
        return Err(Error::invalid(
            "bundle mixes labeled and unlabeled shapes; labels.bin must cover every shape",
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut points = BUNDLE_MAGIC.to_vec();
    let mut segments = BUNDLE_MAGIC.to_vec();
    let mut labels = BUNDLE_MAGIC.to_vec();
    let mut entries = Vec::with_capacity(bundle.shapes.len());
    for s in &bundle.shapes {
        s.validate()?;
        let n = s.cloud.len() as u32;
        let entry = ManifestEntry {
            id: s.id.clone(),
            category: s.category.clone(),
            num_points: n,
            num_segments: s.segments.num_segments as u32,
            points_offset: points.len() as u64,
            segments_offset: segments.len() as u64,
            labels_offset: with_labels.then_some(labels.len() as u64),
        };
        points.extend_from_slice(&n.to_le_bytes());
        for p in s.cloud.points() {
            for c in p {
                points.extend_from_slice(&c.to_le_bytes());
            }
        }
        segments.extend_from_slice(&(s.segments.num_segments as u32).to_le_bytes());
        for a in &s.segments.assignment {
            segments.extend_from_slice(&a.to_le_bytes());
        }
        if let Some(gt) = s.gt.as_ref().filter(|_| with_labels) {
            for l in &gt.labels {
                labels.extend_from_slice(&l.to_le_bytes());
            }
        }
        entries.push(entry);
    }
    let manifest = Manifest {
        format: "PGB1".into(),
        part_names: bundle.part_names.clone(),
        subsample_seed: bundle.subsample_seed,
        shapes: entries,
    };
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    write(MANIFEST_FILE, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    write(POINTS_FILE, &points)?;
    write(SEGMENTS_FILE, &segments)?;
    let labels_path = dir.join(LABELS_FILE);
    if with_labels {
        write(LABELS_FILE, &labels)?;
    } else if labels_path.exists() {
        std::fs::remove_file(&labels_path).map_err(|e| Error::io(labels_path, e))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != "PGB1" {
        return Err(Error::Format {
            file: p.display().to_string(),
            offset: 0,
            message: format!("unknown bundle format {:?}", manifest.format),
        });
    }
    Ok(manifest)
}

fn read_bin(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let p = dir.join(name);
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if bytes.len() < 4 || &bytes[..4] != BUNDLE_MAGIC {
        return Err(Error::Format {
            file: name.to_string(),
            offset: 0,
            message: "missing PGB1 magic".into(),
        });
    }
    Ok(bytes)
}

/// Reads a bundle. Any malformed record fails the whole read.
pub fn read_bundle(dir: &Path) -> Result<Bundle> {
    let manifest = read_manifest(dir)?;
    let points = read_bin(dir, POINTS_FILE)?;
    let segments = read_bin(dir, SEGMENTS_FILE)?;
    let wants_labels = manifest.shapes.iter().any(|e| e.labels_offset.is_some());
    let labels = if wants_labels {
        Some(read_bin(dir, LABELS_FILE)?)
    } else {
        None
    };
    let mut shapes = Vec::with_capacity(manifest.shapes.len());
    for e in &manifest.shapes {
        shapes.push(read_record(e, &manifest, &points, &segments, labels.as_deref())?);
    }
    Ok(Bundle {
        part_names: manifest.part_names,
        subsample_seed: manifest.subsample_seed,
        shapes,
    })
}

fn cursor_at<'a>(bytes: &'a [u8], file: &'a str, offset: u64) -> Result<ByteCursor<'a>> {
    let mut cur = ByteCursor::new(bytes, file);
    if offset < 4 || offset as usize > bytes.len() {
        return Err(cur.error_at(offset, "record offset outside file"));
    }
    cur.take(offset as usize)?;
    Ok(cur)
}

fn read_record(
    e: &ManifestEntry,
    manifest: &Manifest,
    points: &[u8],
    segments: &[u8],
    labels: Option<&[u8]>,
) -> Result<ShapeRecord> {
    let mut cur = cursor_at(points, POINTS_FILE, e.points_offset)?;
    let n = cur.u32()?;
    if n != e.num_points {
        return Err(cur.error_at(
            e.points_offset,
            format!(
                "shape {}: point count {n} disagrees with manifest {}",
                e.id, e.num_points
            ),
        ));
    }
    let n = n as usize;
    if cur.remaining() < n * 12 {
        return Err(cur.error_at(e.points_offset, format!("shape {}: truncated point data", e.id)));
    }
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        pts.push([cur.f32()?, cur.f32()?, cur.f32()?]);
    }
    let cloud = PointCloud::new(pts).map_err(|err| cur.error_at(e.points_offset, err.to_string()))?;

    let mut cur = cursor_at(segments, SEGMENTS_FILE, e.segments_offset)?;
    let s = cur.u32()?;
    if s != e.num_segments {
        return Err(cur.error_at(
            e.segments_offset,
            format!(
                "shape {}: segment count {s} disagrees with manifest {}",
                e.id, e.num_segments
            ),
        ));
    }
    let mut assignment = Vec::with_capacity(n);
    for _ in 0..n {
        let a = cur.u32()?;
        if a >= s {
            return Err(cur.error(format!("shape {}: segment id {a} >= {s}", e.id)));
        }
        assignment.push(a);
    }
    let seg = SuperSegmentSet::from_assignment(&e.id, assignment, manifest.subsample_seed)
        .map_err(|err| cur.error_at(e.segments_offset, err.to_string()))?;

    let gt = match (e.labels_offset, labels) {
        (Some(off), Some(bytes)) => {
            let mut cur = cursor_at(bytes, LABELS_FILE, off)?;
            let mut ls = Vec::with_capacity(n);
            for _ in 0..n {
                ls.push(cur.u32()?);
            }
            Some(PartLabels::new(ls, manifest.part_names.clone()).map_err(|err| cur.error_at(off, err.to_string()))?)
        }
        _ => None,
    };
    Ok(ShapeRecord {
        id: e.id.clone(),
        category: e.category.clone(),
        cloud,
        segments: seg,
        gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::synth::{generate_synthetic_shapes, ShapeCatalog};

    #[test]
    fn empty_bundle_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let b = Bundle::new(vec!["a".into(), "b".into()], 0, vec![]);
        write_bundle(dir.path(), &b).unwrap();
        assert_eq!(read_bundle(dir.path()).unwrap(), b);
    }

    #[test]
    fn shape_roundtrip_is_bit_exact() {
        let cat = ShapeCatalog::chair();
        let shapes = generate_synthetic_shapes(&cat, 2, 4).unwrap();
        let b = Bundle::new(cat.part_names(), 4, shapes);
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &b).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn corrupted_point_count_is_a_format_error() {
        let cat = ShapeCatalog::chair();
        let b = Bundle::new(cat.part_names(), 4, generate_synthetic_shapes(&cat, 2, 4).unwrap());
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &b).unwrap();
        let manifest = read_manifest(dir.path()).unwrap();
        let off = manifest.shapes[1].points_offset as usize;
        let path = dir.path().join(POINTS_FILE);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[off..off + 4].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match read_bundle(dir.path()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, off as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &Bundle::new(vec![], 0, vec![])).unwrap();
        std::fs::write(dir.path().join(SEGMENTS_FILE), b"XXXX").unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(Error::Format { offset: 0, .. })));
    }
}
