use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Fixed distinguishable colors; parts beyond the table get evenly spaced hues.
const BASE: [[u8; 3]; 10] = [
    [228, 26, 28],
    [55, 126, 184],
    [77, 175, 74],
    [152, 78, 163],
    [255, 127, 0],
    [200, 200, 51],
    [166, 86, 40],
    [247, 129, 191],
    [20, 20, 20],
    [0, 190, 190],
];

/// `k` pairwise distinct RGB colors, stable for a given `k`.
pub fn palette(k: usize) -> Vec<[u8; 3]> {
    if k <= BASE.len() {
        return BASE[..k].to_vec();
    }
    (0..k)
        .map(|i| {
            let h = i as f64 / k as f64 * 6.0;
            let x = 1.0 - (h % 2.0 - 1.0).abs();
            let (r, g, b) = match h as usize {
                0 => (1.0, x, 0.0),
                1 => (x, 1.0, 0.0),
                2 => (0.0, 1.0, x),
                3 => (0.0, x, 1.0),
                4 => (x, 0.0, 1.0),
                _ => (1.0, 0.0, x),
            };
            [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
        })
        .collect()
}

/// ASCII PLY with float xyz and uchar rgb per vertex, colored by part label.
pub fn write_colored_ply(path: &Path, points: &[Point], labels: &[usize], num_parts: usize) -> Result<()> {
    if points.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_parts) {
        return Err(Error::invalid(format!("label {l} outside {num_parts} parts")));
    }
    let colors = palette(num_parts);
    let mut out = String::with_capacity(points.len() * 32 + 256);
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", points.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for (p, &l) in points.iter().zip(labels) {
        let [r, g, b] = colors[l];
        out.push_str(&format!("{} {} {} {r} {g} {b}\n", p[0], p[1], p[2]));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_colors_are_distinct() {
        for k in [1, 2, 4, 10, 11, 25] {
            let p = palette(k);
            assert_eq!(p.len(), k);
            for i in 0..k {
                for j in 0..i {
                    assert_ne!(p[i], p[j], "k={k}");
                }
            }
        }
    }

    #[test]
    fn ply_header_and_vertices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ply");
        let pts: Vec<Point> = (0..2048).map(|i| [i as f32, 0.5, -1.0]).collect();
        let labels: Vec<usize> = (0..2048).map(|i| i % 4).collect();
        write_colored_ply(&path, &pts, &labels, 4).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("element vertex 2048\n"));
        assert!(text.contains("property uchar red\n"));
        let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body.len(), 2048);
        assert_eq!(body[1], "1 0.5 -1 55 126 184");
        assert!(write_colored_ply(&path, &pts, &labels, 3).is_err());
        assert!(write_colored_ply(&path, &pts[..3], &labels, 4).is_err());
    }
}
