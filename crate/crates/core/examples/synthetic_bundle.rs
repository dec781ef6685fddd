//! Generates synthetic chairs, writes them as a bundle and reads it back.
//!
//! cargo run --release --example synthetic_bundle -- [shapes] [out_dir]

use std::path::PathBuf;

use partglot::geometry::{generate_synthetic_shapes, read_bundle, write_bundle, Bundle, ShapeCatalog};

fn main() -> partglot::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let count = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let out = args
        .get(2)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("partglot_bundle"));

    let catalog = ShapeCatalog::chair();
    let shapes = generate_synthetic_shapes(&catalog, count, 7)?;
    let bundle = Bundle::new(catalog.part_names(), 7, shapes);
    write_bundle(&out, &bundle)?;
    let back = read_bundle(&out)?;
    assert_eq!(back, bundle);

    println!("{} shapes written to {}", back.shapes.len(), out.display());
    for s in back.shapes.iter().take(5) {
        let gt = s.gt.as_ref().expect("synthetic shapes are labeled");
        let present: Vec<&str> = (0..gt.num_parts())
            .filter(|&k| gt.contains_part(k))
            .map(|k| back.part_names[k].as_str())
            .collect();
        println!(
            "{}: {} points, {} super-segments, parts {:?}",
            s.id,
            s.cloud.len(),
            s.segments.num_segments,
            present
        );
    }
    Ok(())
}
