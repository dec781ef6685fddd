//! Epoch loop: balanced sampling, loss assembly, Adam with polynomial decay,
//! per-epoch checkpoints and metrics.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{encode_rounds, localize, Dataset};
use super::losses::{ce_regularization, classification_loss, group_consistency_loss, row_nll};
use crate::error::{Error, Result};
use crate::eval::iou::majority_per_segment;
use crate::eval::run::{classification_accuracy, part_templates, segmentation_scores};
use crate::language::{balanced_weights, GameRound, Vocabulary};
use crate::model::attention::argmax_rows;
use crate::model::{Model, PreparedShape, RoundInput};
use crate::nn::{poly_lr, Adam, Graph, Tensor, Var};

/// Everything the loop reads besides the config.
pub struct TrainInputs<'a> {
    pub dataset: &'a Dataset,
    pub vocab: &'a Vocabulary,
    pub part_names: &'a [String],
    pub category: &'a str,
    pub train: &'a [GameRound],
    pub val: &'a [GameRound],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub loss: f64,
    pub classification_loss: f64,
    pub ce_loss: f64,
    pub coseg_loss: f64,
    pub few_shot_loss: Option<f64>,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub val_miou: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: Vec<EpochMetrics>,
}

/// Loss terms of one step, as graph nodes.
struct StepLoss {
    total: Var,
    cls: Var,
    ce: Option<Var>,
    coseg: Option<Var>,
}

fn build_loss(
    g: &mut Graph<f32>,
    model: &Model<f32>,
    cfg: &TrainConfig,
    shapes: &[&PreparedShape],
    rounds: &[RoundInput],
) -> Result<(StepLoss, crate::model::ForwardOutput<f32>)> {
    let out = model.forward(g, shapes, rounds, true)?;
    let targets: Vec<usize> = rounds.iter().map(|r| r.target).collect();
    let cls = classification_loss(g, out.logits, &targets, cfg.losses.label_smoothing);
    let mut total = cls;
    let mut ce = None;
    if cfg.uses_ce_reg() {
        let terms: Vec<Var> = out.y.iter().map(|&y| ce_regularization(g, y)).collect();
        let cat = g.concat_cols(&terms);
        let sum = g.sum_all(cat);
        let mean = g.scale(sum, 1.0 / terms.len() as f32);
        let weighted = g.scale(mean, cfg.losses.lambda_ce as f32);
        total = g.add(total, weighted);
        ce = Some(mean);
    }
    let mut coseg = None;
    if cfg.losses.coseg {
        let mut parts = Vec::new();
        for &w in &out.w {
            parts.extend(argmax_rows(g.value(w)));
        }
        let l = group_consistency_loss(g, out.segments.descriptors, &parts)?;
        let weighted = g.scale(l, cfg.losses.lambda_coseg as f32);
        total = g.add(total, weighted);
        coseg = Some(l);
    }
    Ok((StepLoss { total, cls, ce, coseg }, out))
}

fn correct(logits: &Tensor<f32>, rounds: &[RoundInput]) -> usize {
    rounds
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            let row = logits.row(*i);
            (0..3).fold(0, |b, c| if row[c] > row[b] { c } else { b }) == r.target
        })
        .count()
}

/// Per-segment cross entropy between `Y` and the gt-majority part, summed
/// over segments and averaged over the annotated shapes; one optimizer step.
fn few_shot_step(
    model: &mut Model<f32>,
    adam: &mut Adam<f32>,
    data: &Dataset,
    shots: &[usize],
    lr: f64,
) -> Result<f64> {
    let shapes: Vec<&PreparedShape> = shots.iter().map(|&j| &data.shapes[j]).collect();
    let mut g = Graph::new();
    let batch = Model::<f32>::segment_batch(&shapes)?;
    let seg = model.segment.forward(&mut g, &model.store, &batch, true);
    let parts = model
        .parts
        .as_ref()
        .ok_or_else(|| Error::invalid("few-shot refinement needs a PN-Aware model"))?;
    let q = parts.forward(&mut g, &model.store);
    let x = crate::model::attention::logits(&mut g, seg.keys, q);
    let k = model.config.num_parts();
    let mut terms = Vec::with_capacity(shots.len());
    for (&(start, n), &j) in batch.shape_ranges.iter().zip(shots) {
        let gt = data.gt[j]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("few-shot shape {} has no labels", data.shapes[j].id)))?;
        let votes: Vec<usize> = gt.labels.iter().map(|&l| l as usize).collect();
        let targets = majority_per_segment(&votes, &data.shapes[j].assignment, n, k)?;
        let xj = g.slice_rows(x, start, n);
        let (y, _) = crate::model::attention::pn_aware_maps(&mut g, xj, model.config.softmax_mode);
        terms.push(row_nll(&mut g, y, &targets));
    }
    let cat = g.concat_cols(&terms);
    let sum = g.sum_all(cat);
    let loss = g.scale(sum, 1.0 / terms.len() as f32);
    let value = g.value(loss).item() as f64;
    if !value.is_finite() {
        return Err(Error::invalid("few-shot loss is not finite"));
    }
    let grads = g.backward(loss);
    adam.step(&mut model.store, grads.params(), lr);
    model.segment.update_running(&mut model.store, &seg.bn_stats);
    Ok(value)
}

fn write_line(path: &Path, m: &EpochMetrics) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(m)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Trains a listener. With `run_dir`, writes `config.json`, `metrics.jsonl`
/// and `checkpoints/epoch_NNN.ckpt` plus `checkpoints/last.ckpt`.
pub fn train(cfg: &TrainConfig, inputs: &TrainInputs, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = inputs.dataset;
    if data.input_mode != cfg.input_mode {
        return Err(Error::invalid("dataset was prepared for a different input mode"));
    }
    let mcfg = cfg.model_config(inputs.vocab.len(), inputs.part_names, inputs.category);
    let mut model = Model::<f32>::new(mcfg, cfg.seed)?;

    let keep = |rounds: &[GameRound]| -> Vec<GameRound> {
        rounds
            .iter()
            .filter(|r| cfg.mode != crate::model::Mode::PnAware || r.utterance.mentioned_part.is_some())
            .cloned()
            .collect()
    };
    let train_rounds = keep(inputs.train);
    let val_rounds = keep(inputs.val);
    if train_rounds.len() < inputs.train.len() {
        log::warn!(
            "dropped {} training rounds without a single mentioned part",
            inputs.train.len() - train_rounds.len()
        );
    }
    if train_rounds.is_empty() {
        return Err(Error::invalid("no usable training rounds"));
    }
    let train_enc = encode_rounds(&train_rounds, data, inputs.vocab, cfg.max_utterance_len)?;
    let val_enc = encode_rounds(&val_rounds, data, inputs.vocab, cfg.max_utterance_len)?;
    let sampler = if cfg.balanced_sampling && train_rounds.iter().all(|r| r.utterance.mentioned_part.is_some()) {
        Some(WeightedIndex::new(balanced_weights(&train_rounds)?).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let templates = part_templates(inputs.part_names, inputs.category, inputs.vocab);
    let val_ids = data.labeled_ids_in(&val_rounds);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let shots: Vec<usize> = if cfg.few_shot_shapes > 0 {
        let mut ids: Vec<usize> = data
            .labeled_ids_in(&train_rounds)
            .iter()
            .map(|id| data.index[id])
            .collect();
        if ids.len() < cfg.few_shot_shapes {
            return Err(Error::invalid(format!(
                "{} annotated shapes requested, {} available",
                cfg.few_shot_shapes,
                ids.len()
            )));
        }
        ids.shuffle(&mut rng);
        ids.truncate(cfg.few_shot_shapes);
        ids
    } else {
        Vec::new()
    };

    let n = train_enc.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut adam = Adam::new(model.store.len());

    let ckpt_dir: Option<PathBuf> = run_dir.map(|d| d.join("checkpoints"));
    if let (Some(dir), Some(ck)) = (run_dir, &ckpt_dir) {
        std::fs::create_dir_all(ck).map_err(|e| Error::io(ck, e))?;
        let cfg_path = dir.join("config.json");
        std::fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
        let metrics = dir.join("metrics.jsonl");
        if metrics.exists() {
            std::fs::remove_file(&metrics).map_err(|e| Error::io(&metrics, e))?;
        }
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order: Vec<usize> = match &sampler {
            Some(s) => (0..n).map(|_| s.sample(&mut rng)).collect(),
            None => {
                let mut o: Vec<usize> = (0..n).collect();
                o.shuffle(&mut rng);
                o
            }
        };
        let (mut sum_loss, mut sum_cls, mut sum_ce, mut sum_coseg, mut hits) = (0.0, 0.0, 0.0, 0.0, 0usize);
        let mut lr = cfg.lr0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&RoundInput> = chunk.iter().map(|&i| &train_enc[i]).collect();
            let (unique, local) = localize(&refs);
            let shapes: Vec<&PreparedShape> = unique.iter().map(|&j| &data.shapes[j]).collect();
            let mut g = Graph::new();
            let (loss, out) = build_loss(&mut g, &model, cfg, &shapes, &local)?;
            let total = g.value(loss.total).item() as f64;
            if !total.is_finite() {
                log::error!("loss diverged at epoch {epoch}, step {b}");
                return Err(Error::Diverged { epoch, step: b });
            }
            let weight = local.len() as f64;
            sum_loss += total * weight;
            sum_cls += g.value(loss.cls).item() as f64 * weight;
            sum_ce += loss.ce.map_or(0.0, |v| g.value(v).item() as f64) * weight;
            sum_coseg += loss.coseg.map_or(0.0, |v| g.value(v).item() as f64) * weight;
            hits += correct(g.value(out.logits), &local);
            lr = poly_lr(cfg.lr0, step, total_steps, cfg.lr_power);
            let grads = g.backward(loss.total);
            adam.step(&mut model.store, grads.params(), lr);
            model.segment.update_running(&mut model.store, &out.segments.bn_stats);
            step += 1;
        }
        let few_shot_loss = if shots.is_empty() {
            None
        } else {
            Some(few_shot_step(&mut model, &mut adam, data, &shots, lr)?)
        };
        let val_accuracy = if val_enc.is_empty() {
            None
        } else {
            Some(classification_accuracy(&model, data, &val_enc, None)?)
        };
        let val_miou = if cfg.skip_val_miou || val_ids.is_empty() {
            None
        } else {
            Some(segmentation_scores(&model, data, &val_ids, &templates, cfg.iou_average_set)?.average)
        };
        let nf = n as f64;
        let m = EpochMetrics {
            epoch: epoch + 1,
            steps: step,
            lr,
            loss: sum_loss / nf,
            classification_loss: sum_cls / nf,
            ce_loss: sum_ce / nf,
            coseg_loss: sum_coseg / nf,
            few_shot_loss,
            train_accuracy: hits as f64 / nf,
            val_accuracy,
            val_miou,
        };
        log::info!(
            "epoch {} loss {:.4} train acc {:.3} val acc {:?} val mIoU {:?}",
            m.epoch,
            m.loss,
            m.train_accuracy,
            m.val_accuracy,
            m.val_miou
        );
        if let (Some(dir), Some(ck)) = (run_dir, &ckpt_dir) {
            model.save(&ck.join(format!("epoch_{:03}.ckpt", epoch + 1)))?;
            model.save(&ck.join("last.ckpt"))?;
            write_line(&dir.join("metrics.jsonl"), &m)?;
        }
        history.push(m);
    }
    Ok(TrainOutcome { model, history })
}
