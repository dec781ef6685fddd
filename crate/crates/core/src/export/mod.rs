//! Artifacts: colored point clouds, attention and word-attention JSON,
//! report tables and static SVG plots.

pub mod plot;
pub mod ply;
pub mod report;

pub use plot::{attention_heatmap_svg, bar_chart_svg, line_chart_svg, Series};
pub use ply::{palette, write_colored_ply};
pub use report::{format_matrix, format_table, ReportRow, WordAttention};
