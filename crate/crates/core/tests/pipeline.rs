use std::path::Path;

use sbvqa::corruption::{parse_levels, NoiseLevel};
use sbvqa::dataset::{generate_synthetic_dataset, Split, SyntheticSpec};
use sbvqa::harness::{load_trained, run_evaluate, run_sweep, run_train, RunConfig, RunPaths, SweepReport};
use sbvqa::models::ModelKind;

fn write_corpus(dir: &Path) {
    generate_synthetic_dataset(&SyntheticSpec {
        train: 16,
        val: 4,
        test_dev: 4,
        image_dim: 32,
        seed: 3,
        noise_clips: 1,
        noise_secs: 0.5,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .write(dir)
    .unwrap();
}

fn config(kind: ModelKind, data: &Path, out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        model: kind,
        top_answers: SyntheticSpec::num_answers(),
        noise_levels: parse_levels("0,0.5").unwrap(),
        paths: RunPaths {
            manifest: Some(data.join("manifest.jsonl")),
            features: Some(data.join("features.vqaf")),
            noise_bank: Some(data.join("noise")),
            out_dir: Some(out.to_path_buf()),
            ..RunPaths::default()
        },
        ..RunConfig::default()
    };
    cfg.conv_filters = [4, 4, 8, 8, 8];
    cfg.lstm_hidden = 8;
    cfg.embed_dim = 8;
    cfg.fused_dim = 8;
    cfg.hidden_dense = 8;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 8;
    cfg
}

#[test]
fn text_model_trains_reloads_and_evaluates() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus(data.path());
    let cfg = config(ModelKind::Text, data.path(), out.path());
    let summary = run_train(&cfg).unwrap();
    assert_eq!(summary.train_examples, 16);
    assert_eq!(summary.outcome.epochs.len(), 2);
    for f in [
        "model.json",
        "answers.json",
        "vocab.json",
        "best.ckpt",
        "loss.csv",
        "run.cfg",
        "train.json",
    ] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    let loss = std::fs::read_to_string(out.path().join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);

    let trained = load_trained(out.path()).unwrap();
    assert_eq!(trained.model.name(), summary.model);
    assert_eq!(trained.answers.len(), 16);

    let report = run_evaluate(&cfg, NoiseLevel::default()).unwrap();
    assert_eq!(report.counts.total, 4);
    assert_eq!(report.missing, 0);
    assert!(out.path().join("eval_0.json").exists());

    let reloaded = RunConfig::load(&out.path().join("run.cfg")).unwrap();
    assert_eq!(reloaded, cfg);
}

#[test]
fn text_sweep_without_transcripts_counts_missing() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus(data.path());
    let cfg = config(ModelKind::Text, data.path(), out.path());
    run_train(&cfg).unwrap();
    let report = run_sweep(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[1].missing, 4);
    assert_eq!(report.rows[1].all, 0.0);
}

#[test]
fn speech_sweep_generates_corrupted_audio() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus(data.path());
    let mut cfg = config(ModelKind::Speech, data.path(), out.path());
    cfg.train.epochs = 1;
    let summary = run_train(&cfg).unwrap();
    assert_eq!(summary.model, "SpeechMod");
    let report: SweepReport = run_sweep(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.rows.iter().all(|r| r.missing == 0));
    assert!(out.path().join("corrupted").join("plan.jsonl").exists());
    let csv = std::fs::read_to_string(out.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("noise_pct,all,yn,number,other\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn missing_selection_split_keeps_last_epoch() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus(data.path());
    let mut cfg = config(ModelKind::Text, data.path(), out.path());
    cfg.selection_split = None;
    let summary = run_train(&cfg).unwrap();
    assert_eq!(summary.outcome.best_epoch, 2);
    assert_eq!(summary.outcome.best_selection_accuracy, None);
    cfg.selection_split = Some(Split::Val);
    let summary = run_train(&cfg).unwrap();
    assert!(summary.outcome.best_selection_accuracy.is_some());
}

#[test]
fn unset_paths_are_config_errors() {
    let cfg = RunConfig::default();
    let err = run_train(&cfg).unwrap_err().to_string();
    assert!(err.contains("out_dir"), "{err}");
}
