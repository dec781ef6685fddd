//! Super-segment encoder, utterance encoders and part-name queries.

use rand::Rng;

use super::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::language::PAD;
use crate::nn::{Axis, BatchStats, Graph, ParamId, ParamStore, Real, Tensor, Var};

pub const NORM_EPS: f64 = 1e-12;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// `x W + b` with `W` stored as in×out.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_uniform(&format!("{name}.w"), input, output, input, rng);
        let b = store.add_uniform(&format!("{name}.b"), 1, output, input, rng);
        Self { w, b }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }
}

/// Per-column normalization with running statistics for eval mode.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::filled(1, width, F::one())),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(1, width)),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(1, width)),
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::filled(1, width, F::one())),
        }
    }

    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        train: bool,
    ) -> (Var, Option<BatchStats<F>>) {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        if train {
            let (y, stats) = g.batch_norm(x, gamma, beta, F::lit(BN_EPS));
            (y, Some(stats))
        } else {
            let mean = store.get(self.running_mean).data().to_vec();
            let var = store.get(self.running_var).data().to_vec();
            (g.batch_norm_fixed(x, gamma, beta, &mean, &var, F::lit(BN_EPS)), None)
        }
    }

    pub fn update_running<F: Real>(&self, store: &mut ParamStore<F>, stats: &BatchStats<F>) {
        let m = F::lit(BN_MOMENTUM);
        for (id, new) in [(self.running_mean, &stats.mean), (self.running_var, &stats.var)] {
            for (r, &v) in store.get_mut(id).data_mut().iter_mut().zip(new.iter()) {
                *r = (F::one() - m) * *r + m * v;
            }
        }
    }
}

/// Points of many segments from many shapes, flattened for one forward pass.
#[derive(Clone, Debug)]
pub struct SegmentBatch<F> {
    pub points: Tensor<F>,
    /// Row range of each segment in `points`.
    pub segment_ranges: Vec<(usize, usize)>,
    /// Range of each shape in the segment list.
    pub shape_ranges: Vec<(usize, usize)>,
}

impl<F: Real> SegmentBatch<F> {
    /// One entry per shape: its cloud and the point indices of every segment.
    pub fn new(shapes: &[(&[Point], &[Vec<u32>])]) -> Result<Self> {
        let mut data = Vec::new();
        let mut segment_ranges = Vec::new();
        let mut shape_ranges = Vec::with_capacity(shapes.len());
        for (cloud, segments) in shapes {
            if segments.is_empty() {
                return Err(Error::invalid("shape has no super-segments"));
            }
            shape_ranges.push((segment_ranges.len(), segments.len()));
            for (s, members) in segments.iter().enumerate() {
                if members.is_empty() {
                    return Err(Error::invalid(format!("super-segment {s} has no points")));
                }
                segment_ranges.push((data.len() / 3, members.len()));
                for &p in members {
                    let pt = cloud
                        .get(p as usize)
                        .ok_or_else(|| Error::invalid(format!("point index {p} outside cloud of {}", cloud.len())))?;
                    data.extend(pt.iter().map(|&c| F::lit(c as f64)));
                }
            }
        }
        let rows = data.len() / 3;
        Ok(Self {
            points: Tensor::from_vec(rows, 3, data),
            segment_ranges,
            shape_ranges,
        })
    }

    pub fn num_segments(&self) -> usize {
        self.segment_ranges.len()
    }
}

/// Graph outputs of the segment encoder for a whole batch.
#[derive(Debug)]
pub struct SegmentOutput<F> {
    /// Pre-head descriptors `g(s_i)`, one row per segment.
    pub descriptors: Var,
    pub keys: Var,
    pub values: Var,
    pub bn_stats: Vec<BatchStats<F>>,
}

/// Shared per-point MLP, max-pool per segment, then key and value heads.
#[derive(Clone, Debug)]
pub struct SegmentEncoder {
    pub layers: Vec<(Linear, BatchNorm)>,
    pub key: Linear,
    pub value: Linear,
    pub normalize: bool,
    pub with_global_feature: bool,
}

impl SegmentEncoder {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        cfg: &EncoderConfig,
        normalize: bool,
        with_global_feature: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let h = cfg.segment_feature_dim;
        let layers = (0..cfg.segment_mlp_depth)
            .map(|i| {
                let input = if i == 0 { 3 } else { h };
                (
                    Linear::new(store, &format!("segment.mlp{i}"), input, h, rng),
                    BatchNorm::new(store, &format!("segment.bn{i}"), h),
                )
            })
            .collect();
        let head_in = if with_global_feature { 2 * h } else { h };
        Self {
            layers,
            key: Linear::new(store, "segment.key", head_in, cfg.attention_dim, rng),
            value: Linear::new(store, "segment.value", head_in, cfg.attention_dim, rng),
            normalize,
            with_global_feature,
        }
    }

    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        batch: &SegmentBatch<F>,
        train: bool,
    ) -> SegmentOutput<F> {
        let mut x = g.constant(batch.points.clone());
        let mut bn_stats = Vec::new();
        for (lin, bn) in &self.layers {
            let z = lin.forward(g, store, x);
            let (z, stats) = bn.forward(g, store, z, train);
            bn_stats.extend(stats);
            x = g.relu(z);
        }
        let descriptors = g.segment_max(x, &batch.segment_ranges);
        let head_in = if self.with_global_feature {
            let global = g.segment_max(descriptors, &batch.shape_ranges);
            let owner: Vec<usize> = batch
                .shape_ranges
                .iter()
                .enumerate()
                .flat_map(|(s, &(_, n))| std::iter::repeat_n(s, n))
                .collect();
            let spread = g.gather_rows(global, &owner);
            g.concat_cols(&[descriptors, spread])
        } else {
            descriptors
        };
        let mut keys = self.key.forward(g, store, head_in);
        let mut values = self.value.forward(g, store, head_in);
        if self.normalize {
            keys = g.normalize_rows(keys, F::lit(NORM_EPS));
            values = g.normalize_rows(values, F::lit(NORM_EPS));
        }
        SegmentOutput {
            descriptors,
            keys,
            values,
            bn_stats,
        }
    }

    /// Folds the batch statistics of one training step into the running averages.
    pub fn update_running<F: Real>(&self, store: &mut ParamStore<F>, stats: &[BatchStats<F>]) {
        for ((_, bn), s) in self.layers.iter().zip(stats) {
            bn.update_running(store, s);
        }
    }
}

/// Token ids padded to a common length with a validity mask.
#[derive(Clone, Debug)]
pub struct TokenBatch {
    pub ids: Vec<Vec<u32>>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
}

impl TokenBatch {
    /// Pad tokens inside a sequence are treated as padding too.
    pub fn new(sequences: &[Vec<u32>]) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::invalid("empty utterance batch"));
        }
        let mut lengths = Vec::with_capacity(sequences.len());
        for (i, s) in sequences.iter().enumerate() {
            let n = s.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1);
            if n == 0 {
                return Err(Error::invalid(format!("utterance {i} has no tokens")));
            }
            lengths.push(n);
        }
        let max_len = *lengths.iter().max().expect("nonempty");
        let ids = sequences
            .iter()
            .map(|s| {
                let mut v: Vec<u32> = s.iter().take(max_len).copied().collect();
                v.resize(max_len, PAD);
                v
            })
            .collect();
        Ok(Self { ids, lengths, max_len })
    }

    fn valid(&self, r: usize, t: usize) -> bool {
        t < self.lengths[r] && self.ids[r][t] != PAD
    }
}

/// Graph outputs of an utterance encoder.
#[derive(Debug)]
pub struct UtteranceOutput {
    /// R×d features (unit rows for the attention head when normalizing).
    pub feature: Var,
    /// R×T word attention, zero on padding.
    pub word_attention: Var,
}

/// Embedding, LSTM, bilinear word attention and a linear head.
#[derive(Clone, Debug)]
pub struct UtteranceEncoder {
    pub embedding: ParamId,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    /// Bilinear form `B` (H×H) and context `c` (H×1) of `score_t = h_tᵀ B c`.
    pub bilinear: ParamId,
    pub context: ParamId,
    pub head: Linear,
    pub hidden: usize,
    pub normalize_output: bool,
}

impl UtteranceEncoder {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        cfg: &EncoderConfig,
        vocab_size: usize,
        normalize_output: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let (e, h) = (cfg.word_embedding_dim, cfg.lstm_hidden_dim);
        let embedding = store.add_normal(&format!("{name}.embedding"), vocab_size, e, 1.0, rng);
        let w_x = store.add_uniform(&format!("{name}.lstm.w_x"), e, 4 * h, h, rng);
        let w_h = store.add_uniform(&format!("{name}.lstm.w_h"), h, 4 * h, h, rng);
        // Gate order i, f, g, o; forget bias starts at 1.
        let mut b = Tensor::zeros(1, 4 * h);
        for j in h..2 * h {
            b.set(0, j, F::one());
        }
        let bias = store.add(&format!("{name}.lstm.b"), b);
        let bilinear = store.add_uniform(&format!("{name}.attn.bilinear"), h, h, h, rng);
        let context = store.add_uniform(&format!("{name}.attn.context"), h, 1, h, rng);
        let head = Linear::new(store, &format!("{name}.head"), h, cfg.attention_dim, rng);
        Self {
            embedding,
            w_x,
            w_h,
            bias,
            bilinear,
            context,
            head,
            hidden: h,
            normalize_output,
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, batch: &TokenBatch) -> UtteranceOutput {
        let r = batch.ids.len();
        let h = self.hidden;
        let emb = g.param(store, self.embedding);
        let w_x = g.param(store, self.w_x);
        let w_h = g.param(store, self.w_h);
        let bias = g.param(store, self.bias);

        let mut hs = g.constant(Tensor::zeros(r, h));
        let mut cs = g.constant(Tensor::zeros(r, h));
        let mut states = Vec::with_capacity(batch.max_len);
        for t in 0..batch.max_len {
            let idx: Vec<usize> = batch.ids.iter().map(|s| s[t] as usize).collect();
            let x = g.gather_rows(emb, &idx);
            let a = g.linear(x, w_x, Some(bias));
            let b = g.matmul(hs, w_h);
            let gates = g.add(a, b);
            let i = g.slice_cols(gates, 0, h);
            let i = g.sigmoid(i);
            let f = g.slice_cols(gates, h, h);
            let f = g.sigmoid(f);
            let c_new = g.slice_cols(gates, 2 * h, h);
            let c_new = g.tanh(c_new);
            let o = g.slice_cols(gates, 3 * h, h);
            let o = g.sigmoid(o);
            let keep = g.mul(f, cs);
            let write = g.mul(i, c_new);
            cs = g.add(keep, write);
            let squashed = g.tanh(cs);
            hs = g.mul(o, squashed);
            states.push(hs);
        }

        let bl = g.param(store, self.bilinear);
        let ctx = g.param(store, self.context);
        let u = g.matmul(bl, ctx);
        let scores: Vec<Var> = states.iter().map(|&s| g.matmul(s, u)).collect();
        let scores = g.concat_cols(&scores);
        let mut mask = Tensor::zeros(r, batch.max_len);
        for row in 0..r {
            for t in 0..batch.max_len {
                if !batch.valid(row, t) {
                    mask.set(row, t, F::lit(-1e30));
                }
            }
        }
        let mask = g.constant(mask);
        let masked = g.add(scores, mask);
        let word_attention = g.softmax(masked, Axis::Rows);

        let mut pooled = None;
        for (t, &s) in states.iter().enumerate() {
            let a = g.slice_cols(word_attention, t, 1);
            let term = g.mul_col(s, a);
            pooled = Some(match pooled {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        let mut feature = self.head.forward(g, store, pooled.expect("max_len >= 1"));
        if self.normalize_output {
            feature = g.normalize_rows(feature, F::lit(NORM_EPS));
        }
        UtteranceOutput {
            feature,
            word_attention,
        }
    }
}

/// Learned part embeddings mapped by one linear layer to unit queries.
#[derive(Clone, Debug)]
pub struct PartNameEncoder {
    pub embedding: ParamId,
    pub layer: Linear,
    pub num_parts: usize,
    pub normalize: bool,
}

impl PartNameEncoder {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        cfg: &EncoderConfig,
        num_parts: usize,
        normalize: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let pe = cfg.part_embedding_dim;
        Self {
            embedding: store.add_normal("part.embedding", num_parts, pe, 1.0, rng),
            layer: Linear::new(store, "part.linear", pe, cfg.attention_dim, rng),
            num_parts,
            normalize,
        }
    }

    /// All K queries as a K×d matrix.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>) -> Var {
        let e = g.param(store, self.embedding);
        let q = self.layer.forward(g, store, e);
        if self.normalize {
            g.normalize_rows(q, F::lit(NORM_EPS))
        } else {
            q
        }
    }

    pub fn encode_part_name<F: Real>(&self, store: &ParamStore<F>, k: usize) -> Result<Vec<F>> {
        if k >= self.num_parts {
            return Err(Error::invalid(format!("part index {k} outside 0..{}", self.num_parts)));
        }
        let mut g = Graph::new();
        let q = self.forward(&mut g, store);
        Ok(g.value(q).row(k).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn setup(global: bool) -> (ParamStore<f64>, SegmentEncoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = SegmentEncoder::new(&mut store, &EncoderConfig::default(), true, global, &mut rng);
        (store, enc)
    }

    fn cloud(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
    }

    fn features(
        store: &ParamStore<f64>,
        enc: &SegmentEncoder,
        pts: &[Point],
        segs: &[Vec<u32>],
    ) -> (Tensor<f64>, Tensor<f64>) {
        let batch = SegmentBatch::new(&[(pts, segs)]).unwrap();
        let mut g = Graph::new();
        let out = enc.forward(&mut g, store, &batch, false);
        (g.value(out.descriptors).clone(), g.value(out.keys).clone())
    }

    #[test]
    fn permutation_and_duplication_invariance() {
        let (store, enc) = setup(false);
        let pts = cloud(20, 3);
        let base = vec![(0..20).collect::<Vec<u32>>()];
        let perm = vec![(0..20).rev().collect::<Vec<u32>>()];
        let dup = vec![(0..20).chain(0..20).collect::<Vec<u32>>()];
        let a = features(&store, &enc, &pts, &base).0;
        assert_eq!(a, features(&store, &enc, &pts, &perm).0);
        assert_eq!(a, features(&store, &enc, &pts, &dup).0);
    }

    #[test]
    fn segments_are_encoded_independently() {
        let (store, enc) = setup(false);
        let pts = cloud(30, 4);
        let segs: Vec<Vec<u32>> = vec![(0..10).collect(), (10..20).collect(), (20..30).collect()];
        let full = features(&store, &enc, &pts, &segs).1;
        let mut pts2 = pts.clone();
        for p in &mut pts2[10..20] {
            p[0] += 5.0;
        }
        let changed = features(&store, &enc, &pts2, &segs).1;
        assert_eq!(full.row(0), changed.row(0));
        assert_eq!(full.row(2), changed.row(2));
        assert_ne!(full.row(1), changed.row(1));
    }

    #[test]
    fn global_feature_mixes_segments() {
        let (store, enc) = setup(true);
        let pts = cloud(20, 4);
        let segs: Vec<Vec<u32>> = vec![(0..10).collect(), (10..20).collect()];
        let full = features(&store, &enc, &pts, &segs).1;
        let mut pts2 = pts.clone();
        for p in &mut pts2[10..20] {
            p[1] += 5.0;
        }
        assert_ne!(full.row(0), features(&store, &enc, &pts2, &segs).1.row(0));
    }

    #[test]
    fn keys_and_values_are_unit() {
        let (store, enc) = setup(false);
        let pts = cloud(40, 5);
        let segs: Vec<Vec<u32>> = (0..4).map(|s| (s * 10..s * 10 + 10).collect()).collect();
        let batch = SegmentBatch::new(&[(&pts[..], &segs[..])]).unwrap();
        let mut g = Graph::new();
        let out = enc.forward(&mut g, &store, &batch, true);
        for v in [out.keys, out.values] {
            for r in 0..4 {
                let n: f64 = g.value(v).row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn empty_segment_rejected() {
        let pts = cloud(3, 1);
        let segs = [vec![0u32], vec![]];
        assert!(SegmentBatch::<f64>::new(&[(&pts[..], &segs[..])]).is_err());
    }

    fn utterance_encoder(normalize: bool) -> (ParamStore<f64>, UtteranceEncoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let enc = UtteranceEncoder::new(&mut store, "fa", &EncoderConfig::default(), 10, normalize, &mut rng);
        (store, enc)
    }

    #[test]
    fn word_attention_is_a_simplex_over_tokens() {
        let (store, enc) = utterance_encoder(true);
        let batch = TokenBatch::new(&[vec![5], vec![4, 6, 7, 0], vec![8, 9]]).unwrap();
        let mut g = Graph::new();
        let out = enc.forward(&mut g, &store, &batch);
        let a = g.value(out.word_attention);
        assert_eq!(a.shape(), (3, 3));
        assert_eq!(a.row(0), &[1.0, 0.0, 0.0]);
        assert!((a.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a.get(2, 2), 0.0);
        let f = g.value(out.feature);
        for r in 0..3 {
            let n: f64 = f.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn padding_does_not_change_features() {
        let (store, enc) = utterance_encoder(false);
        let run = |seqs: &[Vec<u32>]| {
            let mut g = Graph::new();
            let out = enc.forward(&mut g, &store, &TokenBatch::new(seqs).unwrap());
            g.value(out.feature).row(0).to_vec()
        };
        let a = run(&[vec![4, 5]]);
        let b = run(&[vec![4, 5], vec![6, 7, 8, 9]]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn all_pad_rejected() {
        assert!(TokenBatch::new(&[vec![0, 0]]).is_err());
        assert!(TokenBatch::new(&[]).is_err());
    }

    #[test]
    fn part_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let enc = PartNameEncoder::new(&mut store, &EncoderConfig::default(), 4, true, &mut rng);
        let qs: Vec<Vec<f64>> = (0..4).map(|k| enc.encode_part_name(&store, k).unwrap()).collect();
        for (k, q) in qs.iter().enumerate() {
            assert!((q.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-5);
            assert_eq!(q, &enc.encode_part_name(&store, k).unwrap());
            for other in &qs[k + 1..] {
                assert_ne!(q, other);
            }
        }
        assert!(enc.encode_part_name(&store, 4).is_err());
    }
}
