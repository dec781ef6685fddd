use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::config::{unique_run_dir, BaselineChoice, ExperimentConfig, SplitName, EXPERIMENT_FILE};
use super::dataset::{PreparedDataset, VOCAB_FILE};
use super::{EvalArgs, PrepareArgs, SynthArgs, TrainArgs, VisualizeArgs, DATA_ENV};
use crate::error::{Error, Result};
use crate::eval::run::{
    classification_accuracy, cross_part_matrix, part_templates, projected_segmentation_scores, segmentation_scores,
    upper_bound_scores,
};
use crate::eval::SegmentationScores;
use crate::experiment::build_vocabulary;
use crate::export::plot::{attention_heatmap_svg, bar_chart_svg, line_chart_svg, Series};
use crate::export::report::{format_matrix, format_table, ReportRow, WordAttention};
use crate::export::write_colored_ply;
use crate::geometry::bundle::LABELS_FILE;
use crate::geometry::{generate_synthetic_shapes, read_bundle, write_bundle, Bundle, ShapeCatalog};
use crate::language::{
    preprocess_utterance, read_rounds_jsonl, split_rounds, split_rounds_shape_disjoint, synthesize_reference_games,
    template_words, write_rounds_jsonl, GameRound, PartNameSet, SplitRatios, TemplateSet, TextMaps,
};
use crate::model::{AttentionBaseline, InputMode, Mode, Model, PreparedShape};
use crate::nn::{Real, Tensor};
use crate::train::{encode_rounds, train, Dataset, EpochMetrics, TrainInputs};

const CHECKPOINT: &str = "checkpoints/last.ckpt";

/// Relative paths resolve against `$PARTGLOT_DATA` when it is set; a missing
/// path means the root itself.
fn resolve_data_path(path: Option<&Path>) -> Result<PathBuf> {
    let root = std::env::var_os(DATA_ENV).map(PathBuf::from);
    match (path, root) {
        (Some(p), Some(r)) if p.is_relative() => Ok(r.join(p)),
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(r)) => Ok(r),
        (None, None) => Err(Error::invalid(format!("no bundle given and {DATA_ENV} is not set"))),
    }
}

/// Missing user-supplied paths are input errors, not runtime failures.
fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} {} does not exist", path.display())))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_rows<F: Real>(t: &Tensor<F>) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|r| t.row(r).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        .collect()
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let catalog = ShapeCatalog::builtin(&a.parts)
        .ok_or_else(|| Error::invalid(format!("unknown part catalog {}; expected chair or table", a.parts)))?;
    let shapes = generate_synthetic_shapes(&catalog, a.shapes, a.seed)?;
    let parts = PartNameSet::with_builtin_lexicon(catalog.part_names())?;
    let rounds = synthesize_reference_games(
        &shapes,
        &parts,
        &TemplateSet::default(),
        &TextMaps::builtin(),
        a.rounds,
        a.seed.wrapping_add(1),
    )?;
    create_dir(&a.out)?;
    write_bundle(
        &a.out.join("bundle"),
        &Bundle::new(catalog.part_names(), a.seed, shapes),
    )?;
    write_rounds_jsonl(&a.out.join("rounds.jsonl"), &rounds)?;
    println!(
        "wrote {} {} shapes and {} rounds to {}",
        a.shapes,
        catalog.category,
        rounds.len(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_prepare(a: &PrepareArgs) -> Result<()> {
    let bundle_dir = resolve_data_path(a.bundle.as_deref())?;
    require(&bundle_dir, "bundle")?;
    require(&a.rounds, "rounds file")?;
    if a.require_gt && !bundle_dir.join(LABELS_FILE).exists() {
        return Err(Error::invalid(format!("{} has no {LABELS_FILE}", bundle_dir.display())));
    }
    let bundle = read_bundle(&bundle_dir)?;
    if a.require_gt && !bundle.has_labels() {
        return Err(Error::invalid("some shapes have no ground-truth labels"));
    }
    let category = bundle
        .shapes
        .first()
        .map(|s| s.category.clone())
        .ok_or_else(|| Error::invalid("bundle holds no shapes"))?;
    let parts = match &a.lexicon {
        Some(p) => PartNameSet::with_lexicon_file(bundle.part_names.clone(), p)?,
        None => PartNameSet::with_builtin_lexicon(bundle.part_names.clone())?,
    };

    let mut rounds = read_rounds_jsonl(&a.rounds)?;
    let known: std::collections::HashSet<&str> = bundle.shapes.iter().map(|s| s.id.as_str()).collect();
    let mut problems = Vec::new();
    let maps = TextMaps::builtin();
    for (i, r) in rounds.iter_mut().enumerate() {
        for id in &r.shape_ids {
            if !known.contains(id.as_str()) {
                problems.push(format!("{} record {}: unknown shape {id}", a.rounds.display(), i + 1));
            }
        }
        if r.utterance.words.is_empty() {
            let p = preprocess_utterance(&r.utterance.raw, &maps);
            if p.empty {
                problems.push(format!(
                    "{} record {}: utterance is empty after preprocessing",
                    a.rounds.display(),
                    i + 1
                ));
            }
            r.utterance.words = p.tokens;
        }
        r.utterance.mentioned_part = parts.detect_mentioned_part(&r.utterance.words);
    }
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("{p}");
        }
        return Err(Error::invalid(format!("{} invalid round records", problems.len())));
    }

    let splits = if a.shape_disjoint {
        let (s, dropped) = split_rounds_shape_disjoint(&rounds, SplitRatios::default(), a.seed)?;
        println!("shape-disjoint split dropped {dropped} rounds that straddle splits");
        s
    } else {
        split_rounds(&rounds, SplitRatios::default(), a.seed)?
    };
    let vocab = build_vocabulary(&splits.train, parts.names(), &category);
    PreparedDataset::new(&bundle_dir, &category, parts.names().to_vec(), a.shape_disjoint, a.seed)?
        .write(&a.out, &splits, &vocab)?;

    println!(
        "{} shapes, {} rounds: train {} / val {} / test {}, vocabulary {}",
        bundle.shapes.len(),
        rounds.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        vocab.len()
    );
    let count = |rs: &[GameRound], k: Option<usize>| rs.iter().filter(|r| r.utterance.mentioned_part == k).count();
    let mut labels: Vec<(String, Option<usize>)> = parts.names().iter().cloned().zip((0..).map(Some)).collect();
    labels.push(("(none)".into(), None));
    println!("{:<10} {:>7} {:>7} {:>7}", "part", "train", "val", "test");
    for (name, k) in labels {
        println!(
            "{name:<10} {:>7} {:>7} {:>7}",
            count(&splits.train, k),
            count(&splits.val, k),
            count(&splits.test, k)
        );
    }
    Ok(())
}

/// Trains into a fresh run directory and returns its path.
pub fn cmd_train(a: &TrainArgs) -> Result<PathBuf> {
    let mut cfg = match &a.config {
        Some(p) => {
            require(p, "config")?;
            ExperimentConfig::load(p)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if let Some(r) = &a.run {
        cfg.run_name = Some(r.clone());
    }
    cfg.ablations.extend(a.ablate.iter().cloned());
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.resolve()?;
    let data_dir = cfg
        .data
        .clone()
        .ok_or_else(|| Error::invalid("no prepared dataset: pass --data or set `data` in the config"))?;
    require(&data_dir, "dataset")?;
    let data_dir = std::fs::canonicalize(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
    cfg.data = Some(data_dir.clone());
    let corpus = PreparedDataset::load_corpus(&data_dir)?;

    let name = cfg.run_name.clone().unwrap_or_else(|| cfg.default_run_name());
    create_dir(&cfg.out_dir)?;
    let run_dir = unique_run_dir(&cfg.out_dir, &name);
    create_dir(&run_dir)?;
    cfg.save(&run_dir.join(EXPERIMENT_FILE))?;
    write_file(&run_dir.join(VOCAB_FILE), &corpus.vocab.save_json()?)?;

    let dataset = corpus.dataset(&cfg.train)?;
    let inputs = TrainInputs {
        dataset: &dataset,
        vocab: &corpus.vocab,
        part_names: corpus.parts.names(),
        category: &corpus.category,
        train: &corpus.splits.train,
        val: &corpus.splits.val,
    };
    let outcome = train(&cfg.train, &inputs, Some(&run_dir))?;
    write_curves(&run_dir, &outcome.history)?;
    println!("run directory {}", run_dir.display());
    Ok(run_dir)
}

fn write_curves(dir: &Path, history: &[EpochMetrics]) -> Result<()> {
    let series = |name: &str, f: &dyn Fn(&EpochMetrics) -> Option<f64>| Series {
        name: name.into(),
        points: history
            .iter()
            .filter_map(|m| f(m).map(|v| (m.epoch as f64, v)))
            .collect(),
    };
    let loss = [
        series("loss", &|m| Some(m.loss)),
        series("classification", &|m| Some(m.classification_loss)),
    ];
    write_file(&dir.join("loss.svg"), &line_chart_svg("training loss", &loss))?;
    let scores = [
        series("train accuracy", &|m| Some(m.train_accuracy)),
        series("val accuracy", &|m| m.val_accuracy),
        series("val mIoU", &|m| m.val_miou),
    ];
    write_file(&dir.join("scores.svg"), &line_chart_svg("validation scores", &scores))
}

/// Predicted parts against the gt parts of another category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CrossPartReport {
    pub bundle: PathBuf,
    pub pred_parts: Vec<String>,
    pub gt_parts: Vec<String>,
    /// Rows are predicted parts, columns gt parts; corpus-mean IoU in [0, 1].
    pub matrix: Vec<Vec<f64>>,
}

/// Contents of `report.json`. Scores in rows are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub run: PathBuf,
    pub split: SplitName,
    pub mode: Mode,
    pub input_mode: InputMode,
    pub part_names: Vec<String>,
    pub num_rounds: usize,
    pub num_shapes: usize,
    pub rows: Vec<ReportRow>,
    pub per_shape_miou: BTreeMap<String, f64>,
    pub cross_part: Option<CrossPartReport>,
}

struct LoadedRun {
    cfg: ExperimentConfig,
    model: Model<f32>,
    corpus: crate::experiment::Corpus,
}

fn load_run(run: &Path) -> Result<LoadedRun> {
    require(&run.join(EXPERIMENT_FILE), "run config")?;
    let cfg = ExperimentConfig::load(&run.join(EXPERIMENT_FILE))?;
    let model = Model::<f32>::load(&run.join(CHECKPOINT))?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Error::invalid("run config names no dataset"))?;
    let mut corpus = PreparedDataset::load_corpus(&data)?;
    corpus.vocab = PreparedDataset::read_vocab(run)?;
    Ok(LoadedRun { cfg, model, corpus })
}

fn percent_row(method: &str, s: Option<&SegmentationScores>, accuracy: Option<f64>) -> ReportRow {
    ReportRow {
        method: method.into(),
        per_part: s.map_or_else(Vec::new, |s| s.per_part.iter().map(|v| v * 100.0).collect()),
        average: s.map(|s| s.average * 100.0),
        accuracy: accuracy.map(|a| a * 100.0),
    }
}

/// Scores a run and writes `eval-<split>/` inside it.
pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let LoadedRun { mut cfg, model, corpus } = load_run(&a.run)?;
    if let Some(s) = a.split {
        cfg.eval.split = s;
    }
    if let Some(m) = a.mode {
        cfg.eval.mode = Some(m);
    }
    if let Some(b) = a.baseline {
        cfg.eval.baseline = b;
    }
    if let Some(o) = &a.ood_bundle {
        cfg.eval.ood_bundle = Some(o.clone());
    }
    let mode = model.config.mode;
    if let Some(m) = cfg.eval.mode {
        if m != mode {
            return Err(Error::invalid(format!("run was trained in {mode:?} mode, not {m:?}")));
        }
    }
    let rounds: Vec<GameRound> = match cfg.eval.split {
        SplitName::Train => &corpus.splits.train,
        SplitName::Val => &corpus.splits.val,
        SplitName::Test => &corpus.splits.test,
    }
    .iter()
    .filter(|r| mode != Mode::PnAware || r.utterance.mentioned_part.is_some())
    .cloned()
    .collect();
    let input_mode = model.config.input_mode;
    let data = Dataset::new(&corpus.shapes, input_mode)?;
    let seg_data = Dataset::new(&corpus.shapes, InputMode::SuperSegments)?;
    let enc = encode_rounds(&rounds, &data, &corpus.vocab, model.config.max_utterance_len)?;
    let templates = part_templates(corpus.parts.names(), &corpus.category, &corpus.vocab);
    let ids = data.labeled_ids_in(&rounds);
    let set = cfg.train.iou_average_set;
    let seed = cfg.train.seed;

    let scores = match input_mode {
        InputMode::SuperSegments => segmentation_scores(&model, &data, &ids, &templates, set)?,
        InputMode::RawPoints => projected_segmentation_scores(&model, &data, &seg_data, &ids, &templates, set)?,
    };
    let upper = upper_bound_scores(&seg_data, &ids, corpus.parts.len(), set)?;
    let mut rows = vec![percent_row(
        "model",
        Some(&scores),
        Some(classification_accuracy(&model, &data, &enc, None)?),
    )];
    let baselines: &[(AttentionBaseline, &str)] = match cfg.eval.baseline {
        BaselineChoice::None => &[],
        BaselineChoice::Uniform => &[(AttentionBaseline::Uniform, "uniform_attention")],
        BaselineChoice::Random => &[(AttentionBaseline::Random, "random_attention")],
        BaselineChoice::Both => &[
            (AttentionBaseline::Uniform, "uniform_attention"),
            (AttentionBaseline::Random, "random_attention"),
        ],
    };
    for &(kind, name) in baselines {
        let acc = classification_accuracy(&model, &data, &enc, Some((kind, seed)))?;
        rows.push(percent_row(name, None, Some(acc)));
    }
    rows.push(percent_row("upper_bound", Some(&upper), None));

    let cross_part = match &cfg.eval.ood_bundle {
        Some(p) => {
            let dir = resolve_data_path(Some(p))?;
            require(&dir, "bundle")?;
            let ood = read_bundle(&dir)?;
            if !ood.has_labels() {
                return Err(Error::invalid(format!("{} has no ground-truth labels", dir.display())));
            }
            let ood_data = Dataset::new(&ood.shapes, input_mode)?;
            let ood_ids: Vec<String> = ood.shapes.iter().map(|s| s.id.clone()).collect();
            let matrix = cross_part_matrix(&model, &ood_data, &ood_ids, &templates, ood.part_names.len())?;
            Some(CrossPartReport {
                bundle: dir,
                pred_parts: corpus.parts.names().to_vec(),
                gt_parts: ood.part_names.clone(),
                matrix,
            })
        }
        None => None,
    };

    let split_name = serde_json::to_value(cfg.eval.split)?;
    let out = a.run.join(format!("eval-{}", split_name.as_str().unwrap_or("split")));
    create_dir(&out)?;
    let report = EvalReport {
        run: a.run.clone(),
        split: cfg.eval.split,
        mode,
        input_mode,
        part_names: corpus.parts.names().to_vec(),
        num_rounds: rounds.len(),
        num_shapes: ids.len(),
        rows,
        per_shape_miou: scores
            .shape_ids
            .iter()
            .cloned()
            .zip(scores.per_shape_miou.iter().copied())
            .collect(),
        cross_part,
    };
    write_file(&out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    let mut text = format_table(&report.part_names, &report.rows);
    if let Some(c) = &report.cross_part {
        text.push_str("\ncross-part mIoU\n");
        text.push_str(&format_matrix(&c.pred_parts, &c.gt_parts, &c.matrix));
    }
    write_file(&out.join("report.txt"), &text)?;
    print!("{text}");
    write_file(
        &out.join("per_part_miou.svg"),
        &bar_chart_svg("per-part mIoU", &report.part_names, &scores.per_part),
    )?;
    let mut maps = BTreeMap::new();
    for id in &ids {
        let shape = &data.shapes[data.get(id)?];
        maps.insert(id.clone(), to_rows(&model.part_attention(shape, &templates)?));
    }
    write_file(&out.join("attention_maps.json"), &serde_json::to_string(&maps)?)?;
    Ok(report)
}

/// Writes `visualize/<shape id>/` inside the run and returns its path.
pub fn cmd_visualize(a: &VisualizeArgs) -> Result<PathBuf> {
    let LoadedRun { model, corpus, .. } = load_run(&a.run)?;
    let record = corpus
        .shapes
        .iter()
        .find(|s| s.id == a.shape_id)
        .ok_or_else(|| Error::invalid(format!("unknown shape {}", a.shape_id)))?;
    let k = corpus.parts.len();
    let templates = part_templates(corpus.parts.names(), &corpus.category, &corpus.vocab);
    let shape = PreparedShape::new(record, model.config.input_mode);
    let attention = model.part_attention(&shape, &templates)?;
    let seg = crate::model::attention::extract_segmentation(&attention, &shape.segment_set())?;

    let out = a.run.join("visualize").join(&a.shape_id);
    create_dir(&out)?;
    write_colored_ply(&out.join("segmentation.ply"), &shape.points, &seg.per_point, k)?;
    if let Some(gt) = &record.gt {
        let labels: Vec<usize> = gt.labels.iter().map(|&l| l as usize).collect();
        write_colored_ply(&out.join("ground_truth.ply"), &shape.points, &labels, k)?;
    }
    let rows = to_rows(&attention);
    let maps = BTreeMap::from([(a.shape_id.clone(), rows.clone())]);
    write_file(&out.join("attention.json"), &serde_json::to_string_pretty(&maps)?)?;
    write_file(
        &out.join("attention.svg"),
        &attention_heatmap_svg(&format!("attention of {}", a.shape_id), corpus.parts.names(), &rows),
    )?;

    let text = match &a.utterance {
        Some(u) => u.clone(),
        None => template_words(&corpus.parts.names()[0], &corpus.category).join(" "),
    };
    let words = preprocess_utterance(&text, &TextMaps::builtin()).tokens;
    let (ids, _) = corpus.vocab.encode(&words, model.config.max_utterance_len);
    let (f_c, f_a) = model.word_attention(&ids)?;
    let tokens = words.into_iter().take(ids.len()).collect();
    let wa = WordAttention::new(tokens, f_c, f_a)?;
    write_file(&out.join("word_attention.json"), &serde_json::to_string_pretty(&wa)?)?;
    println!("wrote {}", out.display());
    Ok(out)
}
