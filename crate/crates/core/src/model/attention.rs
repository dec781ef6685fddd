//! Cross-attention from language queries to super-segments.
//!
//! The graph-level functions are used by training; the tensor-level wrappers
//! run the same ops on a throwaway graph so both paths share one definition.

use serde::{Deserialize, Serialize};

use super::config::SoftmaxMode;
use crate::error::{Error, Result};
use crate::geometry::SuperSegmentSet;
use crate::nn::{Axis, Graph, Real, Tensor, Var};

/// `X = keys · queriesᵀ` (S×K). No scaling by √d.
pub fn logits<F: Real>(g: &mut Graph<F>, keys: Var, queries: Var) -> Var {
    g.matmul_t(keys, false, queries, true)
}

/// Row-softmax `Y` and the weights `W` selected by `mode` from logits `x` (S×K).
/// For `ss_only`, `Y` is still the row softmax and `W` the column softmax of `x`.
pub fn pn_aware_maps<F: Real>(g: &mut Graph<F>, x: Var, mode: SoftmaxMode) -> (Var, Var) {
    let y = g.softmax(x, Axis::Rows);
    let w = match mode {
        SoftmaxMode::PnThenSs => g.softmax(y, Axis::Cols),
        SoftmaxMode::PnOnly => y,
        SoftmaxMode::SsOnly => g.softmax(x, Axis::Cols),
        SoftmaxMode::SsThenPn => {
            let c = g.softmax(x, Axis::Cols);
            g.softmax(c, Axis::Rows)
        }
    };
    (y, w)
}

/// `Σ_i w_i v_i` as a 1×d row, for an S×1 weight column and S×d values.
pub fn weighted_sum<F: Real>(g: &mut Graph<F>, values: Var, weights: Var) -> Var {
    g.matmul_t(weights, true, values, false)
}

fn check_finite<F: Real>(t: &Tensor<F>, what: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains non-finite values")))
    }
}

/// Single-softmax attention of one query (length d) over S keys.
pub fn attend_pn_agnostic<F: Real>(query: &[F], keys: &Tensor<F>) -> Result<Vec<F>> {
    if keys.rows() == 0 {
        return Err(Error::invalid("attention needs at least one super-segment"));
    }
    if query.len() != keys.cols() {
        return Err(Error::invalid(format!(
            "query dim {} differs from key dim {}",
            query.len(),
            keys.cols()
        )));
    }
    let q = Tensor::row_vector(query.to_vec());
    check_finite(&q, "query")?;
    check_finite(keys, "keys")?;
    let mut g = Graph::new();
    let (k, q) = (g.constant(keys.clone()), g.constant(q));
    let x = logits(&mut g, k, q);
    let w = g.softmax(x, Axis::Cols);
    Ok(g.value(w).data().to_vec())
}

/// Attention maps of the PN-Aware mode.
#[derive(Clone, Debug, PartialEq)]
pub struct PnAwareMaps<F> {
    pub x: Tensor<F>,
    pub y: Tensor<F>,
    pub w: Tensor<F>,
}

/// Double-softmax attention of K part queries over S keys.
pub fn attend_pn_aware<F: Real>(queries: &Tensor<F>, keys: &Tensor<F>, mode: SoftmaxMode) -> Result<PnAwareMaps<F>> {
    if queries.rows() < 2 {
        return Err(Error::invalid("PN-Aware attention needs at least two part queries"));
    }
    if keys.rows() == 0 {
        return Err(Error::invalid("attention needs at least one super-segment"));
    }
    if queries.cols() != keys.cols() {
        return Err(Error::invalid("query and key dims differ"));
    }
    check_finite(queries, "queries")?;
    check_finite(keys, "keys")?;
    let mut g = Graph::new();
    let (k, q) = (g.constant(keys.clone()), g.constant(queries.clone()));
    let x = logits(&mut g, k, q);
    let (y, w) = pn_aware_maps(&mut g, x, mode);
    Ok(PnAwareMaps {
        x: g.value(x).clone(),
        y: g.value(y).clone(),
        w: g.value(w).clone(),
    })
}

/// Pre-MLP aggregate `Σ_i weights_i · values_i`.
pub fn aggregate<F: Real>(values: &Tensor<F>, weights: &[F]) -> Result<Vec<F>> {
    if values.rows() != weights.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} value rows",
            weights.len(),
            values.rows()
        )));
    }
    let w = Tensor::column_vector(weights.to_vec());
    check_finite(&w, "weights")?;
    Ok(Tensor::matmul(&w, true, values, false).into_data())
}

/// Fixed attention maps used as baselines in place of the learned ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionBaseline {
    /// Every entry `1/S`.
    Uniform,
    /// Column softmax of i.i.d. standard normal logits.
    Random,
}

/// S×K baseline map whose columns lie on the S-simplex.
pub fn baseline_attention<F: Real>(kind: AttentionBaseline, s: usize, k: usize, seed: u64) -> Result<Tensor<F>> {
    if s == 0 || k == 0 {
        return Err(Error::invalid("baseline attention needs S, K >= 1"));
    }
    match kind {
        AttentionBaseline::Uniform => Ok(Tensor::filled(s, k, F::one() / F::from_usize(s).unwrap())),
        AttentionBaseline::Random => {
            use rand::SeedableRng;
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = (0..s * k)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    F::lit(z)
                })
                .collect();
            Ok(crate::nn::softmax(&Tensor::from_vec(s, k, data), Axis::Cols))
        }
    }
}

/// Hard assignment of super-segments (and their points) to parts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub per_segment: Vec<usize>,
    pub per_point: Vec<usize>,
}

/// Row-wise argmax of an S×K attention matrix; ties go to the lowest part index.
pub fn argmax_rows<F: Real>(attention: &Tensor<F>) -> Vec<usize> {
    (0..attention.rows())
        .map(|i| {
            let row = attention.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Labels every super-segment with its highest-attention part and expands to points.
pub fn extract_segmentation<F: Real>(attention: &Tensor<F>, segments: &SuperSegmentSet) -> Result<Segmentation> {
    if attention.cols() < 2 {
        return Err(Error::invalid("segmentation needs at least two parts"));
    }
    if attention.rows() != segments.num_segments {
        return Err(Error::invalid(format!(
            "attention has {} rows for {} super-segments",
            attention.rows(),
            segments.num_segments
        )));
    }
    check_finite(attention, "attention")?;
    let per_segment = argmax_rows(attention);
    let per_point = segments.assignment.iter().map(|&s| per_segment[s as usize]).collect();
    Ok(Segmentation { per_segment, per_point })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn softmax2(a: f64, b: f64) -> [f64; 2] {
        let (ea, eb) = (a.exp(), b.exp());
        [ea / (ea + eb), eb / (ea + eb)]
    }

    #[test]
    fn agnostic_two_keys() {
        let w = attend_pn_agnostic(&[1.0, 0.0], &t(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(w[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(w[0], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(w[1], 0.2689, epsilon = 1e-4);
    }

    #[test]
    fn agnostic_degenerate_cases() {
        assert_eq!(attend_pn_agnostic(&[0.3, 0.4], &t(&[&[1.0, 2.0]])).unwrap(), vec![1.0]);
        let w = attend_pn_agnostic(
            &[0.3, 0.4],
            &t(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]),
        )
        .unwrap();
        assert!(w.iter().all(|&x| (x - 0.2).abs() < 1e-12));
        assert!(attend_pn_agnostic(&[f64::NAN, 0.0], &t(&[&[1.0, 2.0]])).is_err());
        assert!(attend_pn_agnostic(&[1.0, 0.0], &Tensor::zeros(0, 2)).is_err());
    }

    #[test]
    fn aware_identity_logits() {
        // keys = queries = I gives X = I.
        let eye = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let m = attend_pn_aware(&eye, &eye, SoftmaxMode::PnThenSs).unwrap();
        let y = softmax2(1.0, 0.0);
        assert_abs_diff_eq!(m.y.get(0, 0), y[0], epsilon = 1e-12);
        assert_abs_diff_eq!(m.y.get(1, 0), y[1], epsilon = 1e-12);
        let w = softmax2(y[0], y[1]);
        assert_abs_diff_eq!(m.w.get(0, 0), w[0], epsilon = 1e-12);
        assert_abs_diff_eq!(m.w.get(1, 0), w[1], epsilon = 1e-12);
        assert_abs_diff_eq!(m.w.get(1, 1), w[0], epsilon = 1e-12);
        assert_abs_diff_eq!(m.w.get(0, 0), 0.6135, epsilon = 1e-4);
        assert_abs_diff_eq!(m.w.get(1, 0), 0.3865, epsilon = 1e-4);
    }

    #[test]
    fn aware_zero_logits_are_uniform() {
        let q = Tensor::<f64>::zeros(4, 3);
        let k = Tensor::<f64>::zeros(5, 3);
        let m = attend_pn_aware(&q, &k, SoftmaxMode::PnThenSs).unwrap();
        assert!(m.y.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        assert!(m.w.data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn aware_rejects_bad_input() {
        let k = Tensor::<f64>::zeros(3, 2);
        assert!(attend_pn_aware(&Tensor::zeros(1, 2), &k, SoftmaxMode::PnThenSs).is_err());
        let mut q = Tensor::<f64>::zeros(2, 2);
        q.set(0, 0, f64::NAN);
        assert!(attend_pn_aware(&q, &k, SoftmaxMode::PnThenSs).is_err());
    }

    #[test]
    fn softmax_order_matters() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut r = |n: usize| Tensor::<f64>::from_vec(n, 4, (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (q, k) = (r(4), r(8));
        let a = attend_pn_aware(&q, &k, SoftmaxMode::PnThenSs).unwrap();
        let b = attend_pn_aware(&q, &k, SoftmaxMode::SsThenPn).unwrap();
        let diff: f64 = a.w.data().iter().zip(b.w.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-3);
    }

    #[test]
    fn aggregate_examples() {
        let v = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(aggregate(&v, &[0.75, 0.25]).unwrap(), vec![0.75, 0.25]);
        let v3 = t(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 9.0]]);
        assert_eq!(aggregate(&v3, &[0.0, 1.0, 0.0]).unwrap(), vec![3.0, 4.0]);
        let mean = aggregate(&v3, &[1.0 / 3.0; 3]).unwrap();
        assert_abs_diff_eq!(mean[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mean[1], 5.0, epsilon = 1e-12);
        assert!(aggregate(&v3, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn baselines() {
        let u = baseline_attention::<f64>(AttentionBaseline::Uniform, 4, 3, 0).unwrap();
        assert!(u.data().iter().all(|&v| v == 0.25));
        let a = baseline_attention::<f64>(AttentionBaseline::Random, 5, 3, 9).unwrap();
        assert_eq!(a, baseline_attention(AttentionBaseline::Random, 5, 3, 9).unwrap());
        for c in 0..3 {
            assert!((a.column(c).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let v = t(&[&[1.0, 2.0], &[3.0, 5.0], &[2.0, 8.0], &[6.0, 1.0]]);
        let mean = aggregate(&v, &u.column(0)).unwrap();
        assert_eq!(mean, vec![3.0, 4.0]);
        assert!(baseline_attention::<f64>(AttentionBaseline::Uniform, 0, 3, 0).is_err());
    }

    fn segs(assignment: Vec<u32>) -> SuperSegmentSet {
        SuperSegmentSet::from_assignment("s", assignment, 0).unwrap()
    }

    #[test]
    fn segmentation_argmax_and_ties() {
        let s = segs(vec![0, 1, 1, 2]);
        let att = t(&[&[0.1, 0.9], &[0.5, 0.5], &[0.7, 0.3]]);
        let seg = extract_segmentation(&att, &s).unwrap();
        assert_eq!(seg.per_segment, vec![1, 0, 0]);
        assert_eq!(seg.per_point, vec![1, 0, 0, 0]);
        assert!(extract_segmentation(&t(&[&[1.0], &[1.0], &[1.0]]), &s).is_err());
    }

    proptest! {
        #[test]
        fn simplex_invariants(vals in proptest::collection::vec(-5.0f64..5.0, 24)) {
            let q = Tensor::from_vec(3, 2, vals[..6].to_vec());
            let k = Tensor::from_vec(9, 2, vals[6..].to_vec());
            for mode in [SoftmaxMode::PnThenSs, SoftmaxMode::SsOnly, SoftmaxMode::PnOnly, SoftmaxMode::SsThenPn] {
                let m = attend_pn_aware(&q, &k, mode).unwrap();
                for i in 0..9 {
                    prop_assert!((m.y.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
                if matches!(mode, SoftmaxMode::PnThenSs | SoftmaxMode::SsOnly) {
                    for c in 0..3 {
                        prop_assert!((m.w.column(c).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    }
                }
                prop_assert!(m.w.data().iter().all(|&v| v > 0.0));
            }
        }

        #[test]
        fn segmentation_matches_brute_force(vals in proptest::collection::vec(0.0f64..1.0, 12)) {
            let att = Tensor::from_vec(3, 4, vals.clone());
            let seg = extract_segmentation(&att, &segs(vec![2, 0, 1, 1, 0])).unwrap();
            for i in 0..3 {
                let row = &vals[i * 4..i * 4 + 4];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let first = row.iter().position(|&v| v == m).unwrap();
                prop_assert_eq!(seg.per_segment[i], first);
            }
            prop_assert_eq!(seg.per_point.len(), 5);
        }
    }
}
