//! The full listener: encoders, cross-attention, aggregation and the
//! classification head shared by the three candidates.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{self, baseline_attention, extract_segmentation, AttentionBaseline, Segmentation};
use super::config::{InputMode, Mode, ModelConfig};
use super::encoders::{
    Linear, PartNameEncoder, SegmentBatch, SegmentEncoder, SegmentOutput, TokenBatch, UtteranceEncoder,
};
use crate::error::{Error, Result};
use crate::geometry::{Point, ShapeRecord};
use crate::nn::{softmax, Axis, Graph, ParamId, ParamStore, Real, Tensor, Var};

const LN_EPS: f64 = 1e-5;

fn shape_seed(seed: u64, id: &str) -> u64 {
    seed ^ crate::geometry::types::fnv1a64(id.as_bytes())
}

/// A shape reduced to what the model reads: points and segment memberships.
#[derive(Clone, Debug)]
pub struct PreparedShape {
    pub id: String,
    pub points: Vec<Point>,
    /// Point indices fed to the encoder, per segment (capped lists).
    pub segments: Vec<Vec<u32>>,
    /// Point to segment.
    pub assignment: Vec<u32>,
}

impl PreparedShape {
    /// In `raw_points` mode every point becomes its own segment.
    pub fn new(record: &ShapeRecord, mode: InputMode) -> Self {
        let points = record.cloud.points().to_vec();
        let (segments, assignment) = match mode {
            InputMode::SuperSegments => (
                record.segments.per_segment_points.clone(),
                record.segments.assignment.clone(),
            ),
            InputMode::RawPoints => {
                let n = points.len() as u32;
                ((0..n).map(|i| vec![i]).collect(), (0..n).collect())
            }
        };
        Self {
            id: record.id.clone(),
            points,
            segments,
            assignment,
        }
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    /// Segment set view used for segmentation expansion.
    pub fn segment_set(&self) -> crate::geometry::SuperSegmentSet {
        crate::geometry::SuperSegmentSet {
            shape_id: self.id.clone(),
            assignment: self.assignment.clone(),
            num_segments: self.segments.len(),
            per_segment_points: self.segments.clone(),
        }
    }
}

/// One round as the model sees it.
#[derive(Clone, Debug)]
pub struct RoundInput {
    /// Indices into the batch's shape list.
    pub shapes: [usize; 3],
    pub target: usize,
    pub tokens: Vec<u32>,
    pub part: Option<usize>,
}

/// Graph handles produced by one forward pass.
#[derive(Debug)]
pub struct ForwardOutput<F> {
    /// R×3 listener logits.
    pub logits: Var,
    pub segments: SegmentOutput<F>,
    /// Segment row range of each batch shape.
    pub shape_ranges: Vec<(usize, usize)>,
    /// PN-Aware row-softmax `Y` and weights `W` per shape.
    pub y: Vec<Var>,
    pub w: Vec<Var>,
    pub context_attention: Var,
    /// Word attention of `f_a` (PN-Agnostic only).
    pub query_attention: Option<Var>,
}

pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    pub segment: SegmentEncoder,
    pub context: UtteranceEncoder,
    pub query: Option<UtteranceEncoder>,
    pub parts: Option<PartNameEncoder>,
    pub agg_mlp: [Linear; 2],
    pub agg_ln: (ParamId, ParamId),
    pub head: [Linear; 2],
}

impl<F: Real> Model<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = &config.encoder;
        let d = enc.attention_dim;
        let segment = SegmentEncoder::new(&mut store, enc, config.normalize, config.with_global_feature, &mut rng);
        let context = UtteranceEncoder::new(&mut store, "fc", enc, config.vocab_size, false, &mut rng);
        let (query, parts) = match config.mode {
            Mode::PnAgnostic => (
                Some(UtteranceEncoder::new(
                    &mut store,
                    "fa",
                    enc,
                    config.vocab_size,
                    config.normalize,
                    &mut rng,
                )),
                None,
            ),
            Mode::PnAware => (
                None,
                Some(PartNameEncoder::new(
                    &mut store,
                    enc,
                    config.num_parts(),
                    config.normalize,
                    &mut rng,
                )),
            ),
        };
        let agg_mlp = [
            Linear::new(&mut store, "aggregate.mlp0", d, d, &mut rng),
            Linear::new(&mut store, "aggregate.mlp1", d, d, &mut rng),
        ];
        let agg_ln = (
            store.add("aggregate.ln.gamma", Tensor::filled(1, d, F::one())),
            store.add("aggregate.ln.beta", Tensor::zeros(1, d)),
        );
        let h = enc.listener_hidden_dim;
        let head = [
            Linear::new(&mut store, "listener.fc0", 2 * d, h, &mut rng),
            Linear::new(&mut store, "listener.fc1", h, 1, &mut rng),
        ];
        Ok(Self {
            config,
            store,
            segment,
            context,
            query,
            parts,
            agg_mlp,
            agg_ln,
            head,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.write_checkpoint(path, &serde_json::to_string(&self.config)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = crate::nn::params::read_checkpoint_config(path)?;
        let config: ModelConfig = serde_json::from_str(&json)?;
        let mut model = Self::new(config, 0)?;
        model.store.load_checkpoint(path)?;
        Ok(model)
    }

    pub fn segment_batch(shapes: &[&PreparedShape]) -> Result<SegmentBatch<F>> {
        let views: Vec<(&[Point], &[Vec<u32>])> = shapes
            .iter()
            .map(|s| (s.points.as_slice(), s.segments.as_slice()))
            .collect();
        SegmentBatch::new(&views)
    }

    /// Post-norm residual block over the aggregated value: LN(a + MLP(a)).
    fn shape_feature(&self, g: &mut Graph<F>, agg: Var) -> Var {
        let z = self.agg_mlp[0].forward(g, &self.store, agg);
        let z = g.relu(z);
        let z = self.agg_mlp[1].forward(g, &self.store, z);
        let z = g.add(z, agg);
        let gamma = g.param(&self.store, self.agg_ln.0);
        let beta = g.param(&self.store, self.agg_ln.1);
        g.layer_norm(z, gamma, beta, F::lit(LN_EPS))
    }

    /// Logit of each (utterance feature, shape feature) row pair.
    fn listener_head(&self, g: &mut Graph<F>, context: Var, shape: Var) -> Var {
        let x = g.concat_cols(&[context, shape]);
        let z = self.head[0].forward(g, &self.store, x);
        let z = g.relu(z);
        self.head[1].forward(g, &self.store, z)
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {t} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Builds the graph for a batch of rounds over a set of unique shapes.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        shapes: &[&PreparedShape],
        rounds: &[RoundInput],
        train: bool,
    ) -> Result<ForwardOutput<F>> {
        self.forward_with(g, shapes, rounds, train, None)
    }

    /// Like [`Model::forward`], optionally replacing the learned attention by a
    /// baseline map (seeded per shape id).
    pub fn forward_with(
        &self,
        g: &mut Graph<F>,
        shapes: &[&PreparedShape],
        rounds: &[RoundInput],
        train: bool,
        baseline: Option<(AttentionBaseline, u64)>,
    ) -> Result<ForwardOutput<F>> {
        if rounds.is_empty() {
            return Err(Error::invalid("empty round batch"));
        }
        for r in rounds {
            if let Some(&j) = r.shapes.iter().find(|&&j| j >= shapes.len()) {
                return Err(Error::invalid(format!("round references missing shape {j}")));
            }
            if r.target > 2 {
                return Err(Error::invalid("target index outside 0..3"));
            }
            self.check_tokens(&r.tokens)?;
        }
        let batch = Self::segment_batch(shapes)?;
        let seg = self.segment.forward(g, &self.store, &batch, train);
        let ranges: Vec<(usize, usize)> = batch.shape_ranges.clone();
        let tokens: Vec<Vec<u32>> = rounds.iter().map(|r| r.tokens.clone()).collect();
        let tb = TokenBatch::new(&tokens)?;

        let mut value_rows: HashMap<usize, Var> = HashMap::new();
        let mut values_of = |g: &mut Graph<F>, j: usize| {
            *value_rows
                .entry(j)
                .or_insert_with(|| g.slice_rows(seg.values, ranges[j].0, ranges[j].1))
        };

        let mut aggregates = Vec::with_capacity(3 * rounds.len());
        let (mut ys, mut ws, mut query_attention) = (Vec::new(), Vec::new(), None);
        match self.config.mode {
            Mode::PnAware => {
                let parts = self.parts.as_ref().expect("PN-Aware model has part queries");
                let q = parts.forward(g, &self.store);
                let x = attention::logits(g, seg.keys, q);
                for (j, &(start, n)) in ranges.iter().enumerate() {
                    let xj = g.slice_rows(x, start, n);
                    let (y, mut w) = attention::pn_aware_maps(g, xj, self.config.softmax_mode);
                    if let Some((kind, seed)) = baseline {
                        let k = self.config.num_parts();
                        w = g.constant(baseline_attention(kind, n, k, shape_seed(seed, &shapes[j].id))?);
                    }
                    ys.push(y);
                    ws.push(w);
                }
                let mut cache: HashMap<(usize, usize), Var> = HashMap::new();
                for (i, r) in rounds.iter().enumerate() {
                    let k = r.part.ok_or_else(|| {
                        Error::invalid(format!("round {i} mentions no single part; PN-Aware needs one"))
                    })?;
                    if k >= self.config.num_parts() {
                        return Err(Error::invalid(format!("part {k} outside the model's part set")));
                    }
                    for &j in &r.shapes {
                        let agg = match cache.get(&(j, k)) {
                            Some(&a) => a,
                            None => {
                                let wcol = g.slice_cols(ws[j], k, 1);
                                let v = values_of(g, j);
                                let a = attention::weighted_sum(g, v, wcol);
                                cache.insert((j, k), a);
                                a
                            }
                        };
                        aggregates.push(agg);
                    }
                }
            }
            Mode::PnAgnostic => {
                let enc = self
                    .query
                    .as_ref()
                    .expect("PN-Agnostic model has an utterance query encoder");
                let out = enc.forward(g, &self.store, &tb);
                query_attention = Some(out.word_attention);
                for (i, r) in rounds.iter().enumerate() {
                    let q = g.slice_rows(out.feature, i, 1);
                    for &j in &r.shapes {
                        let kj = g.slice_rows(seg.keys, ranges[j].0, ranges[j].1);
                        let x = attention::logits(g, kj, q);
                        let w = match baseline {
                            Some((kind, seed)) => g.constant(baseline_attention(
                                kind,
                                ranges[j].1,
                                1,
                                shape_seed(seed, &shapes[j].id).wrapping_add(i as u64),
                            )?),
                            None => g.softmax(x, Axis::Cols),
                        };
                        let v = values_of(g, j);
                        aggregates.push(attention::weighted_sum(g, v, w));
                    }
                }
            }
        }
        let agg = g.concat_rows(&aggregates);
        let shape_feat = self.shape_feature(g, agg);
        let ctx = self.context.forward(g, &self.store, &tb);
        let spread: Vec<usize> = (0..rounds.len()).flat_map(|i| [i, i, i]).collect();
        let ctx_rows = g.gather_rows(ctx.feature, &spread);
        let logits = self.listener_head(g, ctx_rows, shape_feat);
        let logits = g.reshape(logits, rounds.len(), 3);
        Ok(ForwardOutput {
            logits,
            segments: seg,
            shape_ranges: ranges,
            y: ys,
            w: ws,
            context_attention: ctx.word_attention,
            query_attention,
        })
    }

    /// Listener probabilities for rounds, in eval mode.
    pub fn predict(&self, shapes: &[&PreparedShape], rounds: &[RoundInput]) -> Result<Vec<[f64; 3]>> {
        self.predict_with(shapes, rounds, None)
    }

    pub fn predict_with(
        &self,
        shapes: &[&PreparedShape],
        rounds: &[RoundInput],
        baseline: Option<(AttentionBaseline, u64)>,
    ) -> Result<Vec<[f64; 3]>> {
        let mut g = Graph::new();
        let out = self.forward_with(&mut g, shapes, rounds, false, baseline)?;
        let p = softmax(g.value(out.logits), Axis::Rows);
        Ok((0..p.rows())
            .map(|r| {
                let row = p.row(r);
                [0, 1, 2].map(|c| row[c].to_f64().unwrap_or(f64::NAN))
            })
            .collect())
    }

    /// S×K attention used for segmentation: `W` in PN-Aware mode, the stacked
    /// per-part template attentions in PN-Agnostic mode.
    pub fn part_attention(&self, shape: &PreparedShape, templates: &[Vec<u32>]) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let batch = Self::segment_batch(&[shape])?;
        let seg = self.segment.forward(&mut g, &self.store, &batch, false);
        match self.config.mode {
            Mode::PnAware => {
                let q = self.parts.as_ref().expect("part queries").forward(&mut g, &self.store);
                let x = attention::logits(&mut g, seg.keys, q);
                let (_, w) = attention::pn_aware_maps(&mut g, x, self.config.softmax_mode);
                Ok(g.value(w).clone())
            }
            Mode::PnAgnostic => {
                if templates.len() != self.config.num_parts() {
                    return Err(Error::invalid(format!(
                        "{} template queries for {} parts",
                        templates.len(),
                        self.config.num_parts()
                    )));
                }
                for t in templates {
                    self.check_tokens(t)?;
                }
                let tb = TokenBatch::new(templates)?;
                let q = self
                    .query
                    .as_ref()
                    .expect("query encoder")
                    .forward(&mut g, &self.store, &tb);
                let x = attention::logits(&mut g, seg.keys, q.feature);
                let w = g.softmax(x, Axis::Cols);
                Ok(g.value(w).clone())
            }
        }
    }

    /// Word attention of `f_c` and, in PN-Agnostic mode, of `f_a` over one
    /// token sequence.
    pub fn word_attention(&self, tokens: &[u32]) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        if tokens.is_empty() {
            return Err(Error::invalid("empty utterance"));
        }
        self.check_tokens(tokens)?;
        let tb = TokenBatch::new(&[tokens.to_vec()])?;
        let mut g = Graph::new();
        let row = |g: &Graph<F>, v: Var| -> Vec<f64> {
            g.value(v).row(0)[..tokens.len()]
                .iter()
                .map(|x| x.to_f64().unwrap_or(f64::NAN))
                .collect()
        };
        let c = self.context.forward(&mut g, &self.store, &tb);
        let fc = row(&g, c.word_attention);
        let fa = match &self.query {
            Some(q) => {
                let out = q.forward(&mut g, &self.store, &tb);
                Some(row(&g, out.word_attention))
            }
            None => None,
        };
        Ok((fc, fa))
    }

    pub fn segment_shape(&self, shape: &PreparedShape, templates: &[Vec<u32>]) -> Result<Segmentation> {
        let att = self.part_attention(shape, templates)?;
        extract_segmentation(&att, &shape.segment_set())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_synthetic_shapes, ShapeCatalog};

    fn small_config(mode: Mode) -> ModelConfig {
        let mut c = ModelConfig {
            mode,
            vocab_size: 12,
            ..ModelConfig::default()
        };
        c.encoder.segment_feature_dim = 8;
        c.encoder.attention_dim = 8;
        c.encoder.lstm_hidden_dim = 8;
        c.encoder.word_embedding_dim = 6;
        c.encoder.part_embedding_dim = 5;
        c.encoder.listener_hidden_dim = 8;
        c
    }

    fn shapes() -> Vec<PreparedShape> {
        generate_synthetic_shapes(&ShapeCatalog::chair(), 4, 7)
            .unwrap()
            .iter()
            .map(|s| PreparedShape::new(s, InputMode::SuperSegments))
            .collect()
    }

    #[test]
    fn identical_candidates_get_uniform_probabilities() {
        let s = shapes();
        let refs: Vec<&PreparedShape> = s.iter().collect();
        for mode in [Mode::PnAware, Mode::PnAgnostic] {
            let m = Model::<f64>::new(small_config(mode), 3).unwrap();
            let r = RoundInput {
                shapes: [1, 1, 1],
                target: 0,
                tokens: vec![4, 5, 6],
                part: Some(2),
            };
            let p = m.predict(&refs, &[r]).unwrap()[0];
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn candidate_order_equivariance() {
        let s = shapes();
        let refs: Vec<&PreparedShape> = s.iter().collect();
        for mode in [Mode::PnAware, Mode::PnAgnostic] {
            let m = Model::<f64>::new(small_config(mode), 3).unwrap();
            let mk = |shapes| RoundInput {
                shapes,
                target: 0,
                tokens: vec![4, 7],
                part: Some(0),
            };
            let a = m.predict(&refs, &[mk([0, 1, 2])]).unwrap()[0];
            let b = m.predict(&refs, &[mk([2, 0, 1])]).unwrap()[0];
            assert!((a[0] - b[1]).abs() < 1e-12);
            assert!((a[1] - b[2]).abs() < 1e-12);
            assert!((a[2] - b[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_rounds() {
        let s = shapes();
        let refs: Vec<&PreparedShape> = s.iter().collect();
        let m = Model::<f64>::new(small_config(Mode::PnAware), 3).unwrap();
        let mut r = RoundInput {
            shapes: [0, 1, 9],
            target: 0,
            tokens: vec![4],
            part: Some(0),
        };
        assert!(m.predict(&refs, &[r.clone()]).is_err());
        r.shapes = [0, 1, 2];
        r.part = None;
        assert!(m.predict(&refs, &[r.clone()]).is_err());
        r.part = Some(0);
        r.tokens = vec![40];
        assert!(m.predict(&refs, &[r]).is_err());
    }

    #[test]
    fn segmentation_covers_every_point() {
        let s = shapes();
        let m = Model::<f64>::new(small_config(Mode::PnAware), 3).unwrap();
        let seg = m.segment_shape(&s[0], &[]).unwrap();
        assert_eq!(seg.per_point.len(), s[0].points.len());
        assert!(seg.per_point.iter().all(|&k| k < 4));
        let m = Model::<f64>::new(small_config(Mode::PnAgnostic), 3).unwrap();
        let t = vec![vec![4, 5]; 4];
        assert!(m.segment_shape(&s[0], &t).is_ok());
        assert!(m.segment_shape(&s[0], &t[..2]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = Model::<f32>::new(small_config(Mode::PnAware), 5).unwrap();
        m.save(&p).unwrap();
        let back = Model::<f32>::load(&p).unwrap();
        assert_eq!(back.config, m.config);
        for id in m.store.ids() {
            assert_eq!(m.store.get(id), back.store.get(id));
        }
    }

    #[test]
    fn raw_points_are_singletons() {
        let rec = &generate_synthetic_shapes(&ShapeCatalog::chair(), 1, 1).unwrap()[0];
        let p = PreparedShape::new(rec, InputMode::RawPoints);
        assert_eq!(p.num_segments(), rec.cloud.len());
        assert!(p.segments.iter().enumerate().all(|(i, s)| s == &[i as u32]));
    }
}
