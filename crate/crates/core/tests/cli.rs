mod common;

use std::path::Path;
use std::process::{Command, Output};

use mention_atlas::embedding::sidecar_path;
use mention_atlas::pipeline::{self, EpsSweep, PipelineConfig, PipelineError};
use mention_atlas::synth::{self, SynthConfig};

use common::*;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mention-atlas"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Synthetic eps-sweep corpus plus a model trained on it, through the binary.
fn trained(dir: &Path) -> (String, String, String) {
    let data = dir.join("data");
    let out = cli(&[
        "synth",
        "--preset",
        "eps-sweep",
        "--seed",
        "2",
        "--out-dir",
        &s(&data),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let corpus = s(&data.join("corpus.jsonl"));
    let anns = s(&data.join("annotations.jsonl"));
    let model = s(&dir.join("model/model.vec"));
    let out = cli(&[
        "train",
        "--deterministic",
        "--corpus",
        &corpus,
        "--annotations",
        &anns,
        "--model",
        &model,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    (corpus, anns, model)
}

#[test]
fn train_reports_and_lists_phenotypes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cli(&["synth", "--preset", "compare-refs", "--out-dir", &s(&data)]);
    let out = cli(&[
        "train",
        "--corpus",
        &s(&data.join("corpus.jsonl")),
        "--annotations",
        &s(&data.join("annotations.jsonl")),
        "--out-dir",
        &s(&dir.path().join("run")),
        "--epochs",
        "1",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("vocab size:"));
    assert!(stdout.contains("dim: 100"));
    let side = std::fs::read_to_string(sidecar_path(&dir.path().join("run/model.vec"))).unwrap();
    for c in ["C0011849", "C0011860", "C0020443"] {
        assert!(side.contains(c), "{c} missing from sidecar");
    }
}

#[test]
fn missing_annotations_exit_two_and_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, "").unwrap();
    let missing = s(&dir.path().join("nowhere.jsonl"));
    let out = cli(&["train", "--corpus", &s(&corpus), "--annotations", &missing]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&missing));
}

#[test]
fn unset_corpus_exits_two() {
    assert_eq!(cli(&["train"]).status.code(), Some(2));
}

#[test]
fn guide_without_gold_omits_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, anns, model) = trained(dir.path());
    let stripped = dir.path().join("nogold.jsonl");
    let mut records = read_annotations(Path::new(&anns));
    records.iter_mut().for_each(|a| a.gold_correct = None);
    mention_atlas::corpus::write_jsonl(&stripped, &records).unwrap();
    let out_dir = s(&dir.path().join("guide"));
    let out = cli(&[
        "guide",
        "--corpus",
        &corpus,
        "--annotations",
        &s(&stripped),
        "--model",
        &model,
        "--target",
        "C0038454",
        "--eps-quantile",
        "0.8",
        "--out-dir",
        &out_dir,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("guide/report.json")).unwrap(),
    )
    .unwrap();
    assert!(report.get("accuracy").is_none());
    assert!(report["assumptions"]["sp"].is_null());
    for f in [
        "partition.json",
        "triage.tsv",
        "clusters.json",
        "mention_vectors.jsonl",
    ] {
        assert!(dir.path().join("guide").join(f).exists(), "{f}");
    }
}

#[test]
fn guide_rejects_concepts_outside_the_ontology() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, anns, model) = trained(dir.path());
    let out = cli(&[
        "guide",
        "--corpus",
        &corpus,
        "--annotations",
        &anns,
        "--model",
        &model,
        "--target",
        "C9999999",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("C9999999"));
}

#[test]
fn sweeps_write_sorted_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, anns, model) = trained(dir.path());
    let out_dir = s(&dir.path().join("sweep"));
    let common = [
        "--corpus",
        &corpus,
        "--annotations",
        &anns,
        "--model",
        &model,
        "--out-dir",
        &out_dir,
    ];

    let mut args = vec!["sweep-eps", "--eps", "0.5"];
    args.extend(common);
    assert!(cli(&args).status.success());
    let csv = std::fs::read_to_string(dir.path().join("sweep/sweep_eps.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(
        csv.lines().next().unwrap(),
        "eps,clustered_percentage,sp_embedding,sp_random"
    );

    let mut args = vec!["sweep-eps", "--grid", "8"];
    args.extend(common);
    assert!(cli(&args).status.success());
    let csv = std::fs::read_to_string(dir.path().join("sweep/sweep_eps.csv")).unwrap();
    let clustered: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(clustered.len(), 8);
    assert!(clustered.windows(2).all(|w| w[0] <= w[1]));

    let mut args = vec![
        "sweep-threshold",
        "--target",
        "C0038454",
        "--thresholds=0.5,-1,0.01,1",
    ];
    args.extend(common);
    assert!(cli(&args).status.success());
    let csv = std::fs::read_to_string(dir.path().join("sweep/sweep_threshold.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let thresholds: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(thresholds, ["-1", "0.01", "0.5", "1"]);
    assert_eq!(rows[0][1], "1");
    let waste: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(waste.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn bad_sweep_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, anns, model) = trained(dir.path());
    let cfg = PipelineConfig {
        corpus: Some(corpus.into()),
        annotations: Some(anns.into()),
        model: Some(model.into()),
        out_dir: dir.path().join("x"),
        target_concept: Some(cid("C0038454")),
        ..PipelineConfig::default()
    };
    assert!(matches!(
        pipeline::cmd_sweep_eps(&cfg, &EpsSweep::List(vec![])),
        Err(PipelineError::Invalid(_))
    ));
    assert!(pipeline::cmd_sweep_threshold(&cfg, &[0.2, 1.5]).is_err());
    assert!(pipeline::cmd_compare_refs(&cfg, &[cid("C0038454")]).is_err());
    assert!(pipeline::cmd_compare_refs(&cfg, &[cid("C0038454"), cid("C9999999")]).is_err());
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, anns, model) = trained(dir.path());
    let config = dir.path().join("config.json");
    let body = serde_json::json!({
        "corpus": corpus,
        "annotations": anns,
        "model": model,
        "target_concept": "C0038454",
        "similarity_threshold": 0.3,
        "eps_quantile": 0.8,
        "out_dir": s(&dir.path().join("from_config")),
    });
    std::fs::write(&config, body.to_string()).unwrap();
    let flagged = s(&dir.path().join("from_flag"));
    let out = cli(&[
        "guide",
        "--config",
        &s(&config),
        "--out-dir",
        &flagged,
        "--threshold",
        "-1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!dir.path().join("from_config").exists());
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("from_flag/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["similarity_threshold"], -1.0);
    assert_eq!(report["waste"]["duplicate_waste"], 1.0);
}

#[test]
fn synth_split_writes_both_halves() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "synth",
        "--preset",
        "reuse",
        "--split",
        "0.5",
        "--out-dir",
        &s(dir.path()),
    ]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let docs = summary["documents"].as_u64().unwrap();
    let halves = summary["source"][0].as_u64().unwrap() + summary["target"][0].as_u64().unwrap();
    assert_eq!(docs, halves);
    for half in ["source", "target"] {
        assert!(dir.path().join(half).join("corpus.jsonl").exists());
    }
    assert_eq!(cli(&["synth", "--preset", "nope"]).status.code(), Some(1));
}

/// A task built only from the reused model's own patterns is almost
/// entirely duplicate waste.
#[test]
fn familiar_only_task_is_mostly_duplicate_waste() {
    let dir = tempfile::tempdir().unwrap();
    let mut synth = SynthConfig::preset("reuse").unwrap();
    synth.novel_patterns.clear();
    synth.seed = 4;
    let data = dir.path().join("data");
    pipeline::cmd_synth(&synth, &data, Some(0.5)).unwrap();
    let mut cfg = PipelineConfig {
        corpus: Some(data.join("source/corpus.jsonl")),
        annotations: Some(data.join("source/annotations.jsonl")),
        out_dir: dir.path().join("run"),
        train: reuse_config(),
        deterministic: true,
        target_concept: Some(cid("C0038454")),
        eps_quantile: Some(0.9),
        ..PipelineConfig::default()
    };
    pipeline::cmd_train(&cfg).unwrap();
    cfg.corpus = Some(data.join("target/corpus.jsonl"));
    cfg.annotations = Some(data.join("target/annotations.jsonl"));
    let report = pipeline::cmd_guide(&cfg).unwrap();
    assert!(
        report.waste.duplicate_waste >= 0.9,
        "{}",
        report.waste.duplicate_waste
    );

    cfg.similarity_threshold = 1.0;
    let strict = pipeline::cmd_guide(&cfg).unwrap();
    assert!(
        strict.waste.duplicate_waste < 0.05,
        "{}",
        strict.waste.duplicate_waste
    );
}

/// The reference sharing the task's language keeps at least as much of the
/// task familiar as an unrelated one.
#[test]
fn nearer_reference_keeps_more_waste() {
    let dir = tempfile::tempdir().unwrap();
    let mut synth = SynthConfig::preset("compare-refs").unwrap();
    synth.seed = 5;
    let generated = synth::generate(&synth).unwrap();
    assert!(!generated.target_only_docs.is_empty());
    let data = dir.path().join("data");
    pipeline::cmd_synth(&synth, &data, Some(0.5)).unwrap();
    let mut cfg = PipelineConfig {
        corpus: Some(data.join("source/corpus.jsonl")),
        annotations: Some(data.join("source/annotations.jsonl")),
        out_dir: dir.path().join("run"),
        train: reuse_config(),
        deterministic: true,
        target_concept: Some(cid("C0011849")),
        only_target_mentions: true,
        eps_quantile: Some(0.9),
        ..PipelineConfig::default()
    };
    pipeline::cmd_train(&cfg).unwrap();
    cfg.corpus = Some(data.join("target/corpus.jsonl"));
    cfg.annotations = Some(data.join("target/annotations.jsonl"));
    for threshold in [0.01, 0.3, 0.5] {
        cfg.similarity_threshold = threshold;
        let rows = pipeline::cmd_compare_refs(&cfg, &[cid("C0011860"), cid("C0020443")]).unwrap();
        assert!(
            rows[0].duplicate_waste >= rows[1].duplicate_waste,
            "threshold {threshold}: {rows:?}"
        );
    }
    let tsv = std::fs::read_to_string(dir.path().join("run/compare_refs.tsv")).unwrap();
    assert_eq!(
        tsv.lines().next().unwrap(),
        "reference\tduplicate_waste\tmacro\tmicro"
    );
}
