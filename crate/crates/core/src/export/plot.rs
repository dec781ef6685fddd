//! Minimal static SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#377eb8", "#e41a1c", "#4daf4a", "#984ea3", "#ff7f00", "#a65628"];

/// A named polyline of (x, y) samples.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn axes(out: &mut String, x: (f64, f64), y: (f64, f64)) {
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let yv = y.0 + t * (y.1 - y.0);
        let py = y0 - t * (y0 - y1);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{yv:.3}</text>"#,
            x0 - 4.0,
            py + 4.0
        );
        let xv = x.0 + t * (x.1 - x.0);
        let px = x0 + t * (x1 - x0);
        let _ = writeln!(
            out,
            r#"<text x="{px}" y="{}" text-anchor="middle">{xv:.0}</text>"#,
            y0 + 16.0
        );
    }
}

/// Line chart, one polyline per series, with a legend.
pub fn line_chart_svg(title: &str, series: &[Series]) -> String {
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut out = String::new();
    header(&mut out, title, W, H);
    axes(&mut out, xr, yr);
    let px = |x: f64| MARGIN + (x - xr.0) / (xr.1 - xr.0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * MARGIN);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            W - MARGIN,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars with values in [0, 1] labelled underneath.
pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64]) -> String {
    let mut out = String::new();
    header(&mut out, title, W, H);
    axes(&mut out, (0.0, labels.len() as f64), (0.0, 1.0));
    let n = labels.len().max(1) as f64;
    let slot = (W - 2.0 * MARGIN) / n;
    for (i, (l, &v)) in labels.iter().zip(values).enumerate() {
        let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        let h = v * (H - 2.0 * MARGIN);
        let x = MARGIN + slot * (i as f64 + 0.15);
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
            H - MARGIN - h,
            slot * 0.7,
            COLORS[i % COLORS.len()]
        );
        let cx = x + slot * 0.35;
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            H - MARGIN + 32.0,
            escape(l)
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{v:.3}</text>"#,
            H - MARGIN - h - 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Rows are segments, columns are parts; darker cells carry more attention.
pub fn attention_heatmap_svg(title: &str, parts: &[String], matrix: &[Vec<f64>]) -> String {
    let cell = 28.0;
    let left = 60.0;
    let top = 60.0;
    let w = left + cell * parts.len() as f64 + 20.0;
    let h = top + cell * matrix.len() as f64 + 20.0;
    let mut out = String::new();
    header(&mut out, title, w.max(240.0), h);
    let hi = matrix
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    for (k, p) in parts.iter().enumerate() {
        let x = left + cell * (k as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            top - 8.0,
            escape(p)
        );
    }
    for (i, row) in matrix.iter().enumerate() {
        let y = top + cell * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">s{i}</text>"#,
            left - 6.0,
            y + cell * 0.65
        );
        for (k, &v) in row.iter().enumerate() {
            let t = if hi > 0.0 && v.is_finite() { v / hi } else { 0.0 };
            let shade = (255.0 * (1.0 - t)).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)"><title>{v:.4}</title></rect>"#,
                left + cell * k as f64
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let s = vec![Series {
            name: "loss <train>".into(),
            points: vec![(1.0, 2.0), (2.0, 1.5), (3.0, f64::NAN)],
        }];
        let line = line_chart_svg("curves", &s);
        assert!(line.starts_with("<svg") && line.ends_with("</svg>\n"));
        assert!(line.contains("&lt;train&gt;"));
        assert_eq!(line.matches("<polyline").count(), 1);
        let bars = bar_chart_svg("mIoU", &["a".into(), "b".into()], &[0.2, 0.9]);
        assert_eq!(bars.matches("<rect").count(), 3);
        let heat = attention_heatmap_svg("W", &["a".into(), "b".into()], &[vec![0.1, 0.9], vec![0.5, 0.5]]);
        assert_eq!(heat.matches("<rect").count(), 5);
        assert!(line_chart_svg("empty", &[]).contains("</svg>"));
    }
}
