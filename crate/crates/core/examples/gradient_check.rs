//! Compares reverse-mode gradients with central finite differences for the
//! listener loss and the part-aware attention regularizer.
//!
//! cargo run --release --example gradient_check

use partglot::model::attention::pn_aware_maps;
use partglot::model::SoftmaxMode;
use partglot::nn::{Graph, Tensor, Var};
use partglot::train::losses::{ce_regularization, classification_loss};

const STEP: f64 = 1e-5;

/// Worst relative error over the entries of `x`.
fn check(x: &Tensor<f64>, f: impl Fn(&mut Graph<f64>, Var) -> Var) -> f64 {
    let eval = |t: &Tensor<f64>| {
        let mut g = Graph::new();
        let v = g.variable(t.clone());
        let out = f(&mut g, v);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let v = g.variable(x.clone());
    let out = f(&mut g, v);
    let grads = g.backward(out);
    let analytic = grads.wrt(v).expect("input gradient").clone();
    let mut worst: f64 = 0.0;
    for e in 0..x.len() {
        let (mut plus, mut minus) = (x.clone(), x.clone());
        plus.data_mut()[e] += STEP;
        minus.data_mut()[e] -= STEP;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
        let a = analytic.data()[e];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn main() {
    let logits = Tensor::from_rows(&[vec![0.3, -1.2, 2.0], vec![1.5, 0.1, -0.4]]);
    let e = check(&logits, |g, v| classification_loss(g, v, &[2, 0], 0.1));
    println!("classification loss: worst relative error {e:.2e}");

    let x = Tensor::from_rows(&[vec![0.2, -0.5, 0.9], vec![-0.3, 0.4, 0.1], vec![0.7, 0.0, -0.8]]);
    let e = check(&x, |g, v| {
        let (y, _) = pn_aware_maps(g, v, SoftmaxMode::PnThenSs);
        ce_regularization(g, y)
    });
    println!("attention regularizer: worst relative error {e:.2e}");
}
