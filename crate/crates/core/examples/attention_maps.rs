//! Attention algebra: single softmax, the two-stage part-aware softmax,
//! baselines and aggregation.
//!
//! cargo run --release --example attention_maps

use partglot::model::attention::{aggregate, attend_pn_agnostic, attend_pn_aware, baseline_attention};
use partglot::model::{AttentionBaseline, SoftmaxMode};
use partglot::nn::Tensor;

fn show(name: &str, t: &Tensor<f64>) {
    println!("{name}:");
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:.4}")).collect();
        println!("  [{}]", row.join(", "));
    }
}

fn main() -> partglot::Result<()> {
    // Three super-segments and two parts; keys and queries are unit vectors.
    let keys = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]);
    let queries = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let w = attend_pn_agnostic(queries.row(0), &keys)?;
    println!("single softmax for part 0: {w:.4?}");

    for mode in [SoftmaxMode::PnThenSs, SoftmaxMode::SsThenPn] {
        let maps = attend_pn_aware(&queries, &keys, mode)?;
        println!("-- {mode:?}");
        show("Y (rows sum to 1)", &maps.y);
        show("W (columns sum to 1)", &maps.w);
    }

    let values = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
    let uniform = baseline_attention::<f64>(AttentionBaseline::Uniform, 3, 2, 0)?;
    let random = baseline_attention::<f64>(AttentionBaseline::Random, 3, 2, 0)?;
    show("random baseline", &random);
    println!("uniform aggregate: {:?}", aggregate(&values, &uniform.column(0))?);
    println!("random aggregate:  {:.4?}", aggregate(&values, &random.column(0))?);
    Ok(())
}
