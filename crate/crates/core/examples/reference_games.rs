//! Utterance preprocessing, part mention detection, template reference games,
//! splits and the vocabulary.
//!
//! cargo run --release --example reference_games

use partglot::experiment::build_vocabulary;
use partglot::geometry::{generate_synthetic_shapes, ShapeCatalog};
use partglot::language::{
    preprocess_utterance, split_rounds, synthesize_reference_games, template_query, PartNameSet, SplitRatios,
    TemplateSet, TextMaps,
};

fn main() -> partglot::Result<()> {
    let parts = PartNameSet::chair();
    let maps = TextMaps::builtin();
    for raw in [
        "The chair with THICK armrests!",
        "a chair whose back is tall",
        "seat and legs are thin",
    ] {
        let p = preprocess_utterance(raw, &maps);
        let part = parts
            .detect_mentioned_part(&p.tokens)
            .map(|k| parts.names()[k].as_str());
        println!("{raw:<32} -> {:?}, part {part:?}", p.tokens);
    }

    let shapes = generate_synthetic_shapes(&ShapeCatalog::chair(), 60, 1)?;
    let rounds = synthesize_reference_games(&shapes, &parts, &TemplateSet::default(), &maps, 500, 2)?;
    for r in rounds.iter().take(3) {
        println!(
            "target {} among {:?}: {:?}",
            r.target_index, r.shape_ids, r.utterance.raw
        );
    }
    let splits = split_rounds(&rounds, SplitRatios::default(), 3)?;
    println!(
        "split {} / {} / {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let vocab = build_vocabulary(&splits.train, parts.names(), "chair");
    println!("vocabulary of {} tokens", vocab.len());
    for name in parts.names() {
        println!("template query for {name}: {:?}", template_query(name, "chair", &vocab));
    }
    Ok(())
}
