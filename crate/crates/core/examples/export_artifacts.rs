//! Segments one shape with a briefly trained model and writes a colored PLY,
//! the attention map as JSON and SVG, and the word attention of an utterance.
//!
//! cargo run --release --example export_artifacts -- [out_dir]

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::collections::BTreeMap;
use std::path::PathBuf;

use partglot::eval::part_templates;
use partglot::experiment::{train_and_evaluate, Corpus};
use partglot::export::{attention_heatmap_svg, write_colored_ply, WordAttention};
use partglot::model::{InputMode, PreparedShape};
use partglot::train::TrainConfig;

fn main() -> partglot::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("partglot_export"));
    std::fs::create_dir_all(&out).map_err(|e| partglot::Error::invalid(e.to_string()))?;

    let corpus = Corpus::synthetic(120, 1200, 0)?;
    let cfg = TrainConfig {
        epochs: 2,
        skip_val_miou: true,
        ..TrainConfig::default()
    };
    let (model, _) = train_and_evaluate(&corpus, &cfg)?;

    let record = &corpus.shapes[0];
    let shape = PreparedShape::new(record, InputMode::SuperSegments);
    let templates = part_templates(corpus.parts.names(), &corpus.category, &corpus.vocab);
    let seg = model.segment_shape(&shape, &templates)?;
    let k = corpus.parts.len();
    write_colored_ply(&out.join("segmentation.ply"), &shape.points, &seg.per_point, k)?;

    let att = model.part_attention(&shape, &templates)?;
    let rows: Vec<Vec<f64>> = (0..att.rows())
        .map(|r| att.row(r).iter().map(|&v| v as f64).collect())
        .collect();
    let json = serde_json::to_string_pretty(&BTreeMap::from([(record.id.clone(), rows.clone())]))?;
    let svg = attention_heatmap_svg(&record.id, corpus.parts.names(), &rows);

    let words: Vec<String> = ["a", "chair", "with", "arm"].map(String::from).to_vec();
    let (ids, _) = corpus.vocab.encode(&words, model.config.max_utterance_len);
    let (f_c, f_a) = model.word_attention(&ids)?;
    let wa = WordAttention::new(words, f_c, f_a)?;
    for (name, text) in [
        ("attention.json", json),
        ("attention.svg", svg),
        ("word_attention.json", serde_json::to_string_pretty(&wa)?),
    ] {
        std::fs::write(out.join(name), text).map_err(|e| partglot::Error::invalid(e.to_string()))?;
    }
    println!("wrote {} ({} points, {} parts)", out.display(), shape.points.len(), k);
    println!("word attention {:?} -> {:.3?}", wa.tokens, wa.f_c);
    Ok(())
}
