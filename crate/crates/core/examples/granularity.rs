//! Subdivides super-segments with K-means at several granularities.
//!
//! cargo run --release --example granularity

use partglot::geometry::{generate_synthetic_shapes, split_by_granularity, split_segments_by_factor, ShapeCatalog};

fn main() -> partglot::Result<()> {
    let shape = generate_synthetic_shapes(&ShapeCatalog::chair(), 1, 3)?.remove(0);
    println!("{}: {} super-segments", shape.id, shape.segments.num_segments);
    for n in [512, 128, 32, 1] {
        let s = split_by_granularity(&shape.segments, &shape.cloud, n, 0)?;
        println!("about {n:>3} points per cluster: {:>4} segments", s.num_segments);
    }
    for factor in [2, 4] {
        let s = split_segments_by_factor(&shape.segments, &shape.cloud, factor, 0)?;
        println!("every segment split {factor} ways: {:>4} segments", s.num_segments);
    }
    Ok(())
}
