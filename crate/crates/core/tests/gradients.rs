//! Analytic gradients against central finite differences in double precision.

use partglot::geometry::{generate_synthetic_shapes, ShapeCatalog};
use partglot::model::attention::{logits, pn_aware_maps, weighted_sum};
use partglot::model::{InputMode, Mode, Model, ModelConfig, PreparedShape, RoundInput, SoftmaxMode};
use partglot::nn::Graph;
use partglot::train::losses::{ce_regularization, classification_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{check, random, rel_err, STEP, TOL};

#[test]
fn classification_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let b = rng.gen_range(1..5);
        let targets: Vec<usize> = (0..b).map(|_| rng.gen_range(0..3)).collect();
        let eps = rng.gen_range(0.0..0.3);
        let x = random(&mut rng, b, 3).map(|v| v * 3.0);
        let err = check(&[x], |g, v| classification_loss(g, v[0], &targets, eps));
        assert!(err < TOL, "relative error {err}");
    }
}

#[test]
fn ce_regularization_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (s, k) = (rng.gen_range(1..6), rng.gen_range(2..5));
        let x = random(&mut rng, s, k).map(|v| v * 2.0);
        // Differentiate through the row softmax that produces Y.
        let err = check(&[x], |g, v| {
            let (y, _) = pn_aware_maps(g, v[0], SoftmaxMode::PnThenSs);
            ce_regularization(g, y)
        });
        assert!(err < TOL, "relative error {err}");
    }
}

#[test]
fn attention_aggregate_and_head_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..12 {
        let (s, k, d, h) = (rng.gen_range(1..6), rng.gen_range(2..5), rng.gen_range(2..9), 5);
        let part = rng.gen_range(0..k);
        let mode = [
            SoftmaxMode::PnThenSs,
            SoftmaxMode::SsOnly,
            SoftmaxMode::PnOnly,
            SoftmaxMode::SsThenPn,
        ][trial % 4];
        let inputs = vec![
            random(&mut rng, s, d),     // keys
            random(&mut rng, k, d),     // part queries
            random(&mut rng, s, d),     // values
            random(&mut rng, 1, d),     // utterance feature
            random(&mut rng, 2 * d, h), // head layer 1
            random(&mut rng, 1, h),     // head bias 1
            random(&mut rng, h, 1),     // head layer 2
        ];
        let err = check(&inputs, |g, v| {
            let keys = g.normalize_rows(v[0], 1e-12);
            let queries = g.normalize_rows(v[1], 1e-12);
            let values = g.normalize_rows(v[2], 1e-12);
            let x = logits(g, keys, queries);
            let (_, w) = pn_aware_maps(g, x, mode);
            let col = g.slice_cols(w, part, 1);
            let agg = weighted_sum(g, values, col);
            let feat = g.concat_cols(&[v[3], agg]);
            let z = g.linear(feat, v[4], Some(v[5]));
            let z = g.tanh(z);
            let out = g.linear(z, v[6], None);
            g.sum_all(out)
        });
        assert!(err < TOL, "mode {mode:?}: relative error {err}");
    }
}

/// Whole listener in both modes: every parameter entry of a small model.
#[test]
fn full_model_matches_finite_differences() {
    let records = generate_synthetic_shapes(&ShapeCatalog::chair(), 3, 11).unwrap();
    let shapes: Vec<PreparedShape> = records
        .iter()
        .map(|r| PreparedShape::new(r, InputMode::SuperSegments))
        .collect();
    let refs: Vec<&PreparedShape> = shapes.iter().collect();
    let rounds = vec![
        RoundInput {
            shapes: [0, 1, 2],
            target: 1,
            tokens: vec![4, 5, 6],
            part: Some(2),
        },
        RoundInput {
            shapes: [2, 0, 1],
            target: 0,
            tokens: vec![7, 4],
            part: Some(0),
        },
    ];
    for mode in [Mode::PnAware, Mode::PnAgnostic] {
        let mut cfg = ModelConfig {
            mode,
            vocab_size: 10,
            ..ModelConfig::default()
        };
        cfg.encoder.segment_feature_dim = 6;
        cfg.encoder.attention_dim = 5;
        cfg.encoder.lstm_hidden_dim = 4;
        cfg.encoder.word_embedding_dim = 3;
        cfg.encoder.part_embedding_dim = 3;
        cfg.encoder.listener_hidden_dim = 4;
        let mut model = Model::<f64>::new(cfg, 5).unwrap();
        let loss = |m: &Model<f64>, g: &mut Graph<f64>| {
            let out = m.forward(g, &refs, &rounds, true).unwrap();
            let mut total = classification_loss(g, out.logits, &[1, 0], 0.1);
            for &y in &out.y {
                let ce = ce_regularization(g, y);
                let ce = g.scale(ce, 0.01);
                total = g.add(total, ce);
            }
            total
        };
        let mut g = Graph::new();
        let l = loss(&model, &mut g);
        let grads = g.backward(l);
        let analytic: Vec<_> = grads.params().map(|(id, t)| (id, t.clone())).collect();
        assert!(!analytic.is_empty());
        let mut errors = Vec::new();
        for (id, grad) in analytic {
            for e in 0..grad.data().len() {
                let orig = model.store.get(id).data()[e];
                let mut at = |x: f64| {
                    model.store.get_mut(id).data_mut()[e] = x;
                    let mut g = Graph::new();
                    let l = loss(&model, &mut g);
                    g.value(l).item()
                };
                let numeric = (at(orig + STEP) - at(orig - STEP)) / (2.0 * STEP);
                model.store.get_mut(id).data_mut()[e] = orig;
                errors.push((
                    rel_err(grad.data()[e], numeric),
                    grad.data()[e],
                    numeric,
                    model.store.name(id).to_string(),
                ));
            }
        }
        // Max-pool and ReLU kinks can sit within one step of a perturbation;
        // allow a handful of such entries but no systematic error.
        let bad: Vec<_> = errors
            .iter()
            .filter(|e| e.0 >= TOL && (e.1 - e.2).abs() > 1e-7)
            .collect();
        assert!(
            bad.len() * 100 <= errors.len(),
            "{mode:?}: {} of {} entries off, e.g. {:?}",
            bad.len(),
            errors.len(),
            &bad[..bad.len().min(5)]
        );
    }
}
