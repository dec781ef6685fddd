//! Procedural shapes built from boxes and vertical cylinders, with exact part
//! labels. Stands in for a segmented shape collection at desk scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assign::{assign_points_to_segments, SegmentGeometry};
use super::types::{PartLabels, Point, PointCloud, ShapeRecord, CLOUD_SIZE};
use crate::error::{Error, Result};

/// Representative points drawn per primitive for nearest-primitive segmentation.
const REPRESENTATIVES_PER_PRIMITIVE: usize = 24;
const MAX_EMPTY_RESAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    /// Axis-aligned box; `size` holds full extents along x, y, z.
    Box,
    /// Cylinder along y; `size[0]` is the diameter, `size[1]` the height.
    Cylinder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub kind: PrimitiveKind,
    /// Per-axis `[lo, hi]` range for the center.
    pub center: [[f32; 2]; 3],
    /// Per-axis `[lo, hi]` range for the size.
    pub size: [[f32; 2]; 3],
    /// Add mirrored copies across the x = 0 and/or z = 0 planes.
    #[serde(default)]
    pub mirror_x: bool,
    #[serde(default)]
    pub mirror_z: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub name: String,
    pub existence: f64,
    pub primitives: Vec<PrimitiveSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeCatalog {
    pub category: String,
    pub parts: Vec<PartSpec>,
}

impl ShapeCatalog {
    pub fn part_names(&self) -> Vec<String> {
        self.parts.iter().map(|p| p.name.clone()).collect()
    }

    /// Chairs: back, seat and legs always present, arms optional.
    pub fn chair() -> Self {
        Self {
            category: "chair".into(),
            parts: vec![
                part(
                    "back",
                    1.0,
                    vec![boxed(
                        [[0.0, 0.0], [0.3, 0.38], [-0.25, -0.22]],
                        [[0.4, 0.55], [0.45, 0.6], [0.04, 0.06]],
                    )],
                ),
                part(
                    "seat",
                    1.0,
                    vec![boxed(
                        [[0.0, 0.0], [0.0, 0.05], [0.0, 0.0]],
                        [[0.45, 0.55], [0.05, 0.08], [0.45, 0.55]],
                    )],
                ),
                part(
                    "leg",
                    1.0,
                    vec![PrimitiveSpec {
                        kind: PrimitiveKind::Cylinder,
                        center: [[0.18, 0.22], [-0.22, -0.2], [0.18, 0.22]],
                        size: [[0.035, 0.06], [0.4, 0.44], [0.0, 0.0]],
                        mirror_x: true,
                        mirror_z: true,
                    }],
                ),
                part(
                    "arm",
                    0.5,
                    vec![PrimitiveSpec {
                        mirror_x: true,
                        ..boxed(
                            [[0.25, 0.28], [0.15, 0.2], [-0.02, 0.02]],
                            [[0.04, 0.06], [0.04, 0.06], [0.4, 0.5]],
                        )
                    }],
                ),
            ],
        }
    }

    /// Tables: top, four legs and an optional lower shelf.
    pub fn table() -> Self {
        Self {
            category: "table".into(),
            parts: vec![
                part(
                    "top",
                    1.0,
                    vec![boxed(
                        [[0.0, 0.0], [0.2, 0.25], [0.0, 0.0]],
                        [[0.8, 1.0], [0.05, 0.07], [0.5, 0.7]],
                    )],
                ),
                part(
                    "leg",
                    1.0,
                    vec![PrimitiveSpec {
                        kind: PrimitiveKind::Cylinder,
                        center: [[0.35, 0.42], [-0.1, -0.05], [0.2, 0.28]],
                        size: [[0.04, 0.07], [0.55, 0.6], [0.0, 0.0]],
                        mirror_x: true,
                        mirror_z: true,
                    }],
                ),
                part(
                    "shelf",
                    0.5,
                    vec![boxed(
                        [[0.0, 0.0], [-0.2, -0.12], [0.0, 0.0]],
                        [[0.6, 0.7], [0.03, 0.05], [0.35, 0.45]],
                    )],
                ),
            ],
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "chair" => Some(Self::chair()),
            "table" => Some(Self::table()),
            _ => None,
        }
    }
}

fn part(name: &str, existence: f64, primitives: Vec<PrimitiveSpec>) -> PartSpec {
    PartSpec {
        name: name.into(),
        existence,
        primitives,
    }
}

fn boxed(center: [[f32; 2]; 3], size: [[f32; 2]; 3]) -> PrimitiveSpec {
    PrimitiveSpec {
        kind: PrimitiveKind::Box,
        center,
        size,
        mirror_x: false,
        mirror_z: false,
    }
}

/// One concrete primitive instance.
#[derive(Clone, Debug)]
struct Solid {
    kind: PrimitiveKind,
    center: [f32; 3],
    size: [f32; 3],
    part: usize,
}

impl Solid {
    fn area(&self) -> f64 {
        let [a, b, c] = self.size.map(|x| x as f64);
        match self.kind {
            PrimitiveKind::Box => 2.0 * (a * b + b * c + a * c),
            PrimitiveKind::Cylinder => {
                let r = a / 2.0;
                std::f64::consts::PI * a * b + 2.0 * std::f64::consts::PI * r * r
            }
        }
    }

    fn sample_surface(&self, rng: &mut impl Rng) -> Point {
        let [cx, cy, cz] = self.center;
        let [sx, sy, sz] = self.size;
        match self.kind {
            PrimitiveKind::Box => {
                let faces = [sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy];
                let total: f32 = faces.iter().sum();
                let mut pick = rng.gen::<f32>() * total;
                let mut face = 5;
                for (i, &a) in faces.iter().enumerate() {
                    if pick < a {
                        face = i;
                        break;
                    }
                    pick -= a;
                }
                let u = rng.gen::<f32>() - 0.5;
                let v = rng.gen::<f32>() - 0.5;
                let sign = if face % 2 == 0 { -0.5 } else { 0.5 };
                match face / 2 {
                    0 => [cx + sign * sx, cy + u * sy, cz + v * sz],
                    1 => [cx + u * sx, cy + sign * sy, cz + v * sz],
                    _ => [cx + u * sx, cy + v * sy, cz + sign * sz],
                }
            }
            PrimitiveKind::Cylinder => {
                let r = sx / 2.0;
                let side = std::f32::consts::PI * sx * sy;
                let caps = 2.0 * std::f32::consts::PI * r * r;
                let theta = rng.gen::<f32>() * std::f32::consts::TAU;
                if rng.gen::<f32>() * (side + caps) < side {
                    let h = (rng.gen::<f32>() - 0.5) * sy;
                    [cx + r * theta.cos(), cy + h, cz + r * theta.sin()]
                } else {
                    let rr = r * rng.gen::<f32>().sqrt();
                    let sign = if rng.gen::<bool>() { 0.5 } else { -0.5 };
                    [cx + rr * theta.cos(), cy + sign * sy, cz + rr * theta.sin()]
                }
            }
        }
    }
}

fn sample_range(rng: &mut impl Rng, r: [f32; 2]) -> f32 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn instantiate(catalog: &ShapeCatalog, rng: &mut impl Rng) -> Result<Vec<Solid>> {
    for _ in 0..MAX_EMPTY_RESAMPLES {
        let mut solids = Vec::new();
        for (pi, p) in catalog.parts.iter().enumerate() {
            if rng.gen::<f64>() >= p.existence {
                continue;
            }
            for spec in &p.primitives {
                let center = spec.center.map(|r| sample_range(rng, r));
                let size = spec.size.map(|r| sample_range(rng, r));
                let xs: &[f32] = if spec.mirror_x { &[1.0, -1.0] } else { &[1.0] };
                let zs: &[f32] = if spec.mirror_z { &[1.0, -1.0] } else { &[1.0] };
                for &mx in xs {
                    for &mz in zs {
                        solids.push(Solid {
                            kind: spec.kind,
                            center: [center[0] * mx, center[1], center[2] * mz],
                            size,
                            part: pi,
                        });
                    }
                }
            }
        }
        if !solids.is_empty() {
            return Ok(solids);
        }
    }
    Err(Error::invalid(format!(
        "catalog {} never produced a non-empty shape",
        catalog.category
    )))
}

/// Largest-remainder split of `total` proportional to `weights`.
fn allocate(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Generates `count` labeled shapes. Super-segments come from nearest-primitive
/// assignment against a sparse independent sample of each primitive.
pub fn generate_synthetic_shapes(catalog: &ShapeCatalog, count: usize, seed: u64) -> Result<Vec<ShapeRecord>> {
    if catalog.parts.len() < 2 {
        return Err(Error::invalid("a shape catalog needs at least two part types"));
    }
    if let Some(p) = catalog.parts.iter().find(|p| !(0.0..=1.0).contains(&p.existence)) {
        return Err(Error::invalid(format!("part {} has existence outside [0, 1]", p.name)));
    }
    let part_names = catalog.part_names();
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let id = format!("{}_{i:05}", catalog.category);
            generate_one(catalog, &id, &part_names, &mut rng, seed)
        })
        .collect()
}

fn generate_one(
    catalog: &ShapeCatalog,
    id: &str,
    part_names: &[String],
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<ShapeRecord> {
    let solids = instantiate(catalog, rng)?;
    let areas: Vec<f64> = solids.iter().map(Solid::area).collect();
    let counts = allocate(&areas, CLOUD_SIZE);
    let mut points = Vec::with_capacity(CLOUD_SIZE);
    let mut labels = Vec::with_capacity(CLOUD_SIZE);
    for (s, &n) in solids.iter().zip(&counts) {
        for _ in 0..n {
            points.push(s.sample_surface(rng));
            labels.push(s.part as u32);
        }
    }
    let reps: Vec<Vec<Point>> = solids
        .iter()
        .map(|s| {
            (0..REPRESENTATIVES_PER_PRIMITIVE)
                .map(|_| s.sample_surface(rng))
                .collect()
        })
        .collect();

    // Normalize points and representatives with the same transform.
    let n_points = points.len();
    let mut all = points;
    all.extend(reps.iter().flatten().copied());
    let mut joint = PointCloud::new(all)?;
    joint.normalize_unit_cube();
    let normalized = joint.points();
    let cloud = PointCloud::new(normalized[..n_points].to_vec())?;
    let mut offset = n_points;
    let reps = reps
        .iter()
        .map(|r| {
            let out = normalized[offset..offset + r.len()].to_vec();
            offset += r.len();
            out
        })
        .collect();

    let segments = assign_points_to_segments(id, &cloud, &SegmentGeometry::Representatives(reps), seed)?;
    Ok(ShapeRecord {
        id: id.to_string(),
        category: catalog.category.clone(),
        cloud,
        segments,
        gt: Some(PartLabels::new(labels, part_names.to_vec())?),
    })
}
