//! End-to-end command-line flow on a tiny synthetic corpus.

use std::path::Path;

use partglot::cli::{run, EvalReport};
use serde_json::Value;

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("partglot").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn ply_vertices(p: &Path) -> usize {
    let text = std::fs::read_to_string(p).unwrap();
    let n: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .unwrap()
        .parse()
        .unwrap();
    let body = text.split("end_header\n").nth(1).unwrap();
    assert_eq!(body.lines().count(), n);
    n
}

#[test]
fn synth_prepare_train_eval_visualize() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let synth = root.join("synth");
    let data = root.join("data");
    let runs = root.join("runs");

    assert_eq!(
        cli(&[
            "synth",
            "--shapes",
            "24",
            "--rounds",
            "240",
            "--seed",
            "3",
            "--out",
            s(&synth)
        ]),
        0
    );
    let bundle = synth.join("bundle");
    let rounds = synth.join("rounds.jsonl");
    assert_eq!(
        cli(&[
            "prepare",
            "--bundle",
            s(&bundle),
            "--rounds",
            s(&rounds),
            "--out",
            s(&data),
            "--require-gt"
        ]),
        0
    );
    for f in ["dataset.json", "train.jsonl", "val.jsonl", "test.jsonl", "vocab.json"] {
        assert!(data.join(f).is_file(), "missing {f}");
    }

    let train = |name: &str| {
        cli(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&runs),
            "--run",
            name,
            "--epochs",
            "1",
            "--seed",
            "5",
        ])
    };
    assert_eq!(train("a"), 0);
    assert_eq!(train("b"), 0);
    let (a, b) = (runs.join("a"), runs.join("b"));
    for f in [
        "experiment.json",
        "vocab.json",
        "metrics.jsonl",
        "loss.svg",
        "scores.svg",
    ] {
        assert!(a.join(f).is_file(), "missing {f}");
    }

    assert_eq!(cli(&["eval", "--run", s(&a), "--mode", "pn_aware"]), 0);
    assert_eq!(cli(&["eval", "--run", s(&b)]), 0);
    let report: EvalReport = serde_json::from_value(read_json(&a.join("eval-test/report.json"))).unwrap();
    let other: EvalReport = serde_json::from_value(read_json(&b.join("eval-test/report.json"))).unwrap();
    // Same seed and data: identical scores.
    assert_eq!(report.rows, other.rows);
    assert_eq!(report.per_shape_miou, other.per_shape_miou);
    let methods: Vec<&str> = report.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(
        methods,
        ["model", "uniform_attention", "random_attention", "upper_bound"]
    );
    for row in &report.rows {
        for v in row.per_part.iter().chain(&row.average).chain(&row.accuracy) {
            assert!((0.0..=100.0).contains(v), "{} out of range: {v}", row.method);
        }
    }
    assert!(a.join("eval-test/report.txt").is_file());
    assert!(a.join("eval-test/per_part_miou.svg").is_file());

    let shape = report.per_shape_miou.keys().next().unwrap().clone();
    assert_eq!(
        cli(&[
            "visualize",
            "--run",
            s(&a),
            "--shape-id",
            &shape,
            "--utterance",
            "the thin back"
        ]),
        0
    );
    let vis = a.join("visualize").join(&shape);
    assert_eq!(ply_vertices(&vis.join("segmentation.ply")), 2048);
    assert_eq!(ply_vertices(&vis.join("ground_truth.ply")), 2048);
    let words = read_json(&vis.join("word_attention.json"));
    let f_c: Vec<f64> = serde_json::from_value(words["f_c"].clone()).unwrap();
    assert_eq!(f_c.len(), words["tokens"].as_array().unwrap().len());
    assert!((f_c.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    let attention = read_json(&vis.join("attention.json"));
    for row in attention[&shape].as_array().unwrap() {
        let sum: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!(sum > 0.0);
    }
}

#[test]
fn invalid_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    assert_eq!(cli(&["eval", "--run", s(&missing)]), 2);
    assert_eq!(cli(&["train", "--data", s(&missing)]), 2);
    assert_eq!(cli(&["frobnicate"]), 2);
    assert_eq!(cli(&["synth", "--parts", "sofa", "--out", s(&missing)]), 2);

    let config = tmp.path().join("bad.json");
    std::fs::write(&config, r#"{"not_a_field": 1}"#).unwrap();
    assert_eq!(cli(&["train", "--config", s(&config)]), 2);
    std::fs::write(&config, r#"{"ablations": ["no_such_switch"]}"#).unwrap();
    assert_eq!(cli(&["train", "--config", s(&config)]), 2);
}

#[test]
fn both_builtin_catalogs_synthesize_games() {
    let tmp = tempfile::tempdir().unwrap();
    for parts in ["chair", "table"] {
        let out = tmp.path().join(parts);
        assert_eq!(
            cli(&[
                "synth",
                "--parts",
                parts,
                "--shapes",
                "30",
                "--rounds",
                "20",
                "--out",
                s(&out)
            ]),
            0
        );
        let lines = std::fs::read_to_string(out.join("rounds.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 20);
    }
}
