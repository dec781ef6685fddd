//! Trains a PN-Aware listener on synthetic chairs and reports test scores.
//!
//! cargo run --release --example synthetic_end_to_end -- [epochs] [seed]

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use partglot::experiment::{train_and_evaluate, Corpus};
use partglot::train::TrainConfig;

fn main() -> partglot::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let corpus = Corpus::synthetic(300, 3000, seed)?;
    println!(
        "{} shapes, {} train / {} val / {} test rounds, vocabulary {}",
        corpus.shapes.len(),
        corpus.splits.train.len(),
        corpus.splits.val.len(),
        corpus.splits.test.len(),
        corpus.vocab.len()
    );
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let (_, s) = train_and_evaluate(&corpus, &cfg)?;
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    println!("accuracy          {:.3}", s.accuracy);
    println!("uniform attention {:.3}", s.uniform_accuracy);
    println!("random attention  {:.3}", s.random_accuracy);
    println!(
        "test mIoU         {:.3}  per part {:?}",
        s.segmentation.average, s.segmentation.per_part
    );
    println!("upper bound mIoU  {:.3}", s.upper_bound.average);
    Ok(())
}
