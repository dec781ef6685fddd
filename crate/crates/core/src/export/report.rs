use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One method's row: per-part mIoU, average mIoU and accuracy, all in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ReportRow {
    pub method: String,
    pub per_part: Vec<f64>,
    pub average: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Aligned-column text table with one row per method.
pub fn format_table(part_names: &[String], rows: &[ReportRow]) -> String {
    let mut header = vec!["method".to_string()];
    header.extend(part_names.iter().cloned());
    header.push("avg".into());
    header.push("acc".into());
    let mut grid = vec![header];
    for r in rows {
        let mut line = vec![r.method.clone()];
        line.extend((0..part_names.len()).map(|k| cell(r.per_part.get(k).copied())));
        line.push(cell(r.average));
        line.push(cell(r.accuracy));
        grid.push(line);
    }
    align(&grid)
}

/// Aligned matrix of predicted parts (rows) against gt parts (columns), in percent.
pub fn format_matrix(row_names: &[String], col_names: &[String], m: &[Vec<f64>]) -> String {
    let mut header = vec!["pred \\ gt".to_string()];
    header.extend(col_names.iter().cloned());
    let mut grid = vec![header];
    for (name, row) in row_names.iter().zip(m) {
        let mut line = vec![name.clone()];
        line.extend(row.iter().map(|v| cell(Some(v * 100.0))));
        grid.push(line);
    }
    align(&grid)
}

fn cell(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.1}"))
}

/// First column left-aligned, the rest right-aligned, two spaces apart.
fn align(grid: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in grid {
        let cells: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Per-token attention of the context and query encoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct WordAttention {
    pub tokens: Vec<String>,
    pub f_c: Vec<f64>,
    pub f_a: Option<Vec<f64>>,
}

impl WordAttention {
    pub fn new(tokens: Vec<String>, f_c: Vec<f64>, f_a: Option<Vec<f64>>) -> Result<Self> {
        for w in std::iter::once(&f_c).chain(f_a.as_ref()) {
            if w.len() != tokens.len() {
                return Err(Error::invalid(format!(
                    "{} weights for {} tokens",
                    w.len(),
                    tokens.len()
                )));
            }
            if w.iter().any(|v| !(0.0..=1.0 + 1e-9).contains(v)) {
                return Err(Error::invalid("word attention outside [0, 1]"));
            }
        }
        Ok(Self { tokens, f_c, f_a })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_columns_align() {
        let parts = vec!["back".to_string(), "seat".to_string()];
        let rows = vec![
            ReportRow {
                method: "pn_aware".into(),
                per_part: vec![71.25, 5.0],
                average: Some(38.1),
                accuracy: Some(80.0),
            },
            ReportRow {
                method: "upper_bound".into(),
                per_part: vec![100.0, 99.0],
                average: Some(99.5),
                accuracy: None,
            },
        ];
        let t = format_table(&parts, &rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("method"));
        assert!(lines[1].contains("71.2") || lines[1].contains("71.3"));
        assert!(lines[2].ends_with('-'));
        let end = |l: &str, s: &str| l.find(s).unwrap() + s.len();
        assert_eq!(end(lines[0], "seat"), end(lines[1], "5.0"));
    }

    #[test]
    fn matrix_has_header_and_rows() {
        let names = vec!["seat".to_string(), "leg".to_string()];
        let m = format_matrix(&names, &names, &[vec![0.5, 0.0], vec![0.0, 1.0]]);
        let lines: Vec<&str> = m.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with("0.0") && lines[2].ends_with("100.0"));
    }

    #[test]
    fn word_attention_checks_lengths() {
        let t = vec!["a".to_string()];
        assert!(WordAttention::new(t.clone(), vec![1.0], None).is_ok());
        assert!(WordAttention::new(t.clone(), vec![0.5, 0.5], None).is_err());
        assert!(WordAttention::new(t, vec![1.0], Some(vec![2.0])).is_err());
    }
}
