//! Trains a listener into a run directory with per-epoch checkpoints, then
//! reloads the last checkpoint and checks it predicts identically.
//!
//! cargo run --release --example train_listener -- [epochs] [run_dir]

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::path::PathBuf;

use partglot::experiment::Corpus;
use partglot::model::Model;
use partglot::train::{encode_rounds, train, TrainConfig, TrainInputs};

fn main() -> partglot::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let run = args
        .get(2)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("partglot_run"));

    let corpus = Corpus::synthetic(120, 1200, 0)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let data = corpus.dataset(&cfg)?;
    let inputs = TrainInputs {
        dataset: &data,
        vocab: &corpus.vocab,
        part_names: corpus.parts.names(),
        category: &corpus.category,
        train: &corpus.splits.train,
        val: &corpus.splits.val,
    };
    let outcome = train(&cfg, &inputs, Some(&run))?;
    for m in &outcome.history {
        println!(
            "epoch {} lr {:.2e} loss {:.4} val accuracy {:?}",
            m.epoch, m.lr, m.loss, m.val_accuracy
        );
    }

    let reloaded = Model::<f32>::load(&run.join("checkpoints/last.ckpt"))?;
    let test: Vec<_> = corpus
        .splits
        .test
        .iter()
        .filter(|r| r.utterance.mentioned_part.is_some())
        .cloned()
        .collect();
    let rounds = encode_rounds(&test, &data, &corpus.vocab, cfg.max_utterance_len)?;
    let a = partglot::eval::listener_probabilities(&outcome.model, &data, &rounds, None)?;
    let b = partglot::eval::listener_probabilities(&reloaded, &data, &rounds, None)?;
    assert_eq!(a, b);
    println!(
        "checkpoint in {} reproduces {} test predictions",
        run.display(),
        a.len()
    );
    Ok(())
}
