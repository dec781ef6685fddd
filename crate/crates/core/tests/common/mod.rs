//! Oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use partglot::nn::{Graph, Tensor, Var};
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst relative error between reverse-mode and central-difference
/// gradients over every input entry of a scalar function of leaf tensors.
pub fn check(inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let eval = |ts: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()));
        for e in 0..t.data().len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[e], numeric));
        }
    }
    worst
}

/// IoU by explicit set arithmetic with the pinned empty-set conventions.
pub fn set_iou(pred: &BTreeSet<usize>, gt: &BTreeSet<usize>) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    pred.intersection(gt).count() as f64 / pred.union(gt).count() as f64
}

pub fn members(labels: &[usize], k: usize) -> BTreeSet<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == k)
        .map(|(i, _)| i)
        .collect()
}

/// Mean set IoU over all `k` parts.
pub fn set_miou(pred: &[usize], gt: &[usize], k: usize) -> f64 {
    (0..k).map(|p| set_iou(&members(pred, p), &members(gt, p))).sum::<f64>() / k as f64
}

/// Every labeling of `n` items with `k` labels, in lexicographic order.
pub fn labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|l| {
                (0..k).map(move |v| {
                    let mut l = l.clone();
                    l.push(v);
                    l
                })
            })
            .collect();
    }
    out
}
