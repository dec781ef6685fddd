//! Loss terms on the autodiff graph, with plain-value wrappers.

use crate::error::{Error, Result};
use crate::nn::{Graph, Real, Tensor, Var};

pub const LOG_FLOOR: f64 = 1e-12;

/// Smoothed target distribution over three candidates.
pub fn smoothed_targets(target: usize, eps: f64) -> [f64; 3] {
    let mut t = [eps / 2.0; 3];
    t[target] = 1.0 - eps;
    t
}

/// Mean over rounds of the cross entropy between R×3 logits and smoothed targets.
pub fn classification_loss<F: Real>(g: &mut Graph<F>, logits: Var, targets: &[usize], eps: f64) -> Var {
    let (r, c) = g.shape(logits);
    assert_eq!(c, 3, "listener logits have three columns");
    assert_eq!(r, targets.len(), "one target per round");
    let mut w = Tensor::zeros(r, 3);
    let scale = -1.0 / r as f64;
    for (i, &t) in targets.iter().enumerate() {
        for (k, v) in smoothed_targets(t, eps).iter().enumerate() {
            w.set(i, k, F::lit(v * scale));
        }
    }
    let lp = g.log_softmax_rows(logits);
    g.dot_const(lp, w)
}

/// `Σ_i −log Y[i, argmax_k Y_ik]`; the argmax is a constant pseudo-label.
pub fn ce_regularization<F: Real>(g: &mut Graph<F>, y: Var) -> Var {
    let picks = crate::model::attention::argmax_rows(g.value(y));
    row_nll(g, y, &picks)
}

/// `Σ_i −log Y[i, targets_i]` with the log argument floored at 1e-12.
pub fn row_nll<F: Real>(g: &mut Graph<F>, y: Var, targets: &[usize]) -> Var {
    let (s, k) = g.shape(y);
    assert_eq!(s, targets.len(), "one target per row");
    let mut w = Tensor::zeros(s, k);
    for (i, &t) in targets.iter().enumerate() {
        w.set(i, t, -F::one());
    }
    let l = g.log(y, F::lit(LOG_FLOOR));
    g.dot_const(l, w)
}

/// `1 + max_k σ₂(M_k) − min_{k≠l} σ₂([M_k; M_l])` over the parts that own at
/// least one descriptor row. With a single part present the min term is
/// dropped and a warning is logged.
pub fn group_consistency_loss<F: Real>(g: &mut Graph<F>, descriptors: Var, parts: &[usize]) -> Result<Var> {
    let (s, _) = g.shape(descriptors);
    if parts.len() != s {
        return Err(Error::invalid(format!(
            "{} part labels for {s} descriptors",
            parts.len()
        )));
    }
    if s == 0 {
        return Err(Error::invalid("group consistency needs at least one descriptor"));
    }
    let k_max = parts.iter().max().copied().unwrap_or(0) + 1;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k_max];
    for (i, &k) in parts.iter().enumerate() {
        groups[k].push(i);
    }
    let present: Vec<&Vec<usize>> = groups.iter().filter(|m| !m.is_empty()).collect();
    let pick = |g: &mut Graph<F>, vars: Vec<Var>, largest: bool| {
        vars.into_iter()
            .reduce(|a, b| {
                let (va, vb) = (g.value(a).item(), g.value(b).item());
                if (vb > va) == largest && vb != va {
                    b
                } else {
                    a
                }
            })
            .expect("nonempty")
    };
    let singles: Vec<Var> = present
        .iter()
        .map(|rows| {
            let m = g.gather_rows(descriptors, rows);
            g.second_singular_value(m)
        })
        .collect();
    let max_term = pick(g, singles, true);
    let one = g.constant(Tensor::scalar(F::one()));
    let base = g.add(one, max_term);
    if present.len() < 2 {
        log::warn!("group consistency: all segments assigned to one part; dropping the pair term");
        return Ok(base);
    }
    let mut pairs = Vec::new();
    for a in 0..present.len() {
        for b in a + 1..present.len() {
            let rows: Vec<usize> = present[a].iter().chain(present[b]).copied().collect();
            let m = g.gather_rows(descriptors, &rows);
            pairs.push(g.second_singular_value(m));
        }
    }
    let min_term = pick(g, pairs, false);
    Ok(g.sub(base, min_term))
}

/// Plain-value classification loss for one round.
pub fn classification_loss_value(logits: [f64; 3], target: usize, eps: f64) -> f64 {
    let mut g = Graph::<f64>::new();
    let l = g.constant(Tensor::row_vector(logits.to_vec()));
    let loss = classification_loss(&mut g, l, &[target], eps);
    g.value(loss).item()
}

/// Plain-value `L_CE` of an S×K row-stochastic matrix.
pub fn ce_regularization_value(y: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(y.clone());
    let loss = ce_regularization(&mut g, v);
    g.value(loss).item()
}

pub fn group_consistency_value(descriptors: &Tensor<f64>, parts: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(descriptors.clone());
    let loss = group_consistency_loss(&mut g, v, parts)?;
    Ok(g.value(loss).item())
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use super::*;

    #[test]
    fn classification_examples() {
        let ln3 = 3f64.ln();
        assert_abs_diff_eq!(classification_loss_value([0.0; 3], 1, 0.0), ln3, epsilon = 1e-12);
        assert_abs_diff_eq!(classification_loss_value([0.0; 3], 1, 0.1), ln3, epsilon = 1e-12);
        assert!(classification_loss_value([60.0, 0.0, 0.0], 0, 0.0) < 1e-20);
    }

    #[test]
    fn smoothed_optimum_is_the_smoothed_distribution() {
        // Gradient descent on the logits converges to softmax = smoothed target.
        let eps = 0.1;
        let mut z = [0.3, -0.2, 0.5];
        for _ in 0..4000 {
            let mut g = Graph::<f64>::new();
            let v = g.variable(Tensor::row_vector(z.to_vec()));
            let loss = classification_loss(&mut g, v, &[2], eps);
            let grad = g.backward(loss).wrt(v).unwrap().clone();
            for (zi, gi) in z.iter_mut().zip(grad.data()) {
                *zi -= 0.5 * gi;
            }
        }
        let p = crate::nn::softmax(&Tensor::row_vector(z.to_vec()), crate::nn::Axis::Rows);
        let t = smoothed_targets(2, eps);
        for (k, &tk) in t.iter().enumerate() {
            assert_abs_diff_eq!(p.get(0, k), tk, epsilon = 1e-6);
        }
    }

    #[test]
    fn ce_regularization_examples() {
        let uniform = Tensor::filled(3, 4, 0.25);
        assert_abs_diff_eq!(ce_regularization_value(&uniform), 3.0 * 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ce_regularization_value(&uniform), 4.1589, epsilon = 1e-4);
        let row = Tensor::row_vector(vec![0.7, 0.3]);
        assert_abs_diff_eq!(ce_regularization_value(&row), 0.3567, epsilon = 1e-4);
        let onehot = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(ce_regularization_value(&onehot), 0.0);
    }

    #[test]
    fn ce_regularization_pseudo_label_is_constant() {
        let mut g = Graph::<f64>::new();
        let y = g.variable(Tensor::row_vector(vec![0.7, 0.3]));
        let loss = ce_regularization(&mut g, y);
        let grad = g.backward(loss).wrt(y).unwrap().clone();
        assert_abs_diff_eq!(grad.get(0, 0), -1.0 / 0.7, epsilon = 1e-12);
        assert_eq!(grad.get(0, 1), 0.0);
    }

    #[test]
    fn zero_probability_is_floored() {
        let y = Tensor::row_vector(vec![0.0, 0.0]);
        assert_abs_diff_eq!(ce_regularization_value(&y), -(1e-12f64).ln(), epsilon = 1e-9);
    }

    fn sigma2(rows: &[Vec<f64>]) -> f64 {
        if rows.len() < 2 {
            return 0.0;
        }
        let m = DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]);
        let mut s: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s.get(1).copied().unwrap_or(0.0)
    }

    #[test]
    fn group_consistency_matches_svd_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let parts = [0, 1, 0, 1, 1, 0];
        let m0: Vec<Vec<f64>> = [0, 2, 5].iter().map(|&i| rows[i].clone()).collect();
        let m1: Vec<Vec<f64>> = [1, 3, 4].iter().map(|&i| rows[i].clone()).collect();
        let both: Vec<Vec<f64>> = m0.iter().chain(&m1).cloned().collect();
        let expect = 1.0 + sigma2(&m0).max(sigma2(&m1)) - sigma2(&both);
        let got = group_consistency_value(&Tensor::from_rows(&rows), &parts).unwrap();
        assert_abs_diff_eq!(got, expect, epsilon = 1e-9);
    }

    #[test]
    fn group_consistency_rank_one_parts() {
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 2.0, 0.0],
        ];
        let both: Vec<Vec<f64>> = rows.clone();
        let got = group_consistency_value(&Tensor::from_rows(&rows), &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(got, 1.0 - sigma2(&both), epsilon = 1e-9);
    }

    #[test]
    fn group_consistency_single_part() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let got = group_consistency_value(&Tensor::from_rows(&rows), &[2, 2, 2]).unwrap();
        assert_abs_diff_eq!(got, 1.0 + sigma2(&rows), epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn sharpening_never_increases_ce(p in 0.05f64..0.95, t in 0.0f64..1.0) {
            let (hi, lo) = (p.max(1.0 - p), p.min(1.0 - p));
            let sharper = hi + t * (1.0 - hi);
            let a = ce_regularization_value(&Tensor::row_vector(vec![hi, lo]));
            let b = ce_regularization_value(&Tensor::row_vector(vec![sharper, 1.0 - sharper]));
            prop_assert!(b <= a + 1e-12);
        }
    }
}
