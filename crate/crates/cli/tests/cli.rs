use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sbvqa::audio::{write_wav, Waveform};
use sbvqa::models::{ModelSpec, SpeechModConfig};
use sbvqa::tensor::write_checkpoint;

fn sbvqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbvqa"))
        .args(args)
        .env_remove("SBVQA_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_data(dir: &Path) {
    let o = sbvqa(&[
        "gen-data",
        "--out",
        p(dir),
        "--train",
        "32",
        "--val",
        "4",
        "--test-dev",
        "4",
        "--image-dim",
        "16",
        "--noise-clips",
        "1",
        "--noise-secs",
        "0.5",
        "--seed",
        "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        out.insert(
            path.file_name().unwrap().to_string_lossy().into_owned(),
            std::fs::read(&path).unwrap(),
        );
    }
    out
}

#[test]
fn wer_example() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("ref.jsonl");
    let h = dir.path().join("hyp.jsonl");
    std::fs::write(&r, "{\"question_id\": 1, \"text\": \"what color is the cat\"}\n").unwrap();
    std::fs::write(&h, "{\"question_id\": 1, \"text\": \"what color is a cat\"}\n").unwrap();
    let o = sbvqa(&["wer", "--ref", p(&r), "--hyp", p(&h)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((report["wer"].as_f64().unwrap() - 0.2).abs() < 1e-12, "{report}");
    assert_eq!(report["questions"], 1);
}

#[test]
fn corrupt_is_deterministic() {
    let data = tempfile::tempdir().unwrap();
    gen_data(data.path());
    let manifest = data.path().join("manifest.jsonl");
    let noise = data.path().join("noise");
    let a = data.path().join("a");
    let b = data.path().join("b");
    for out in [&a, &b] {
        let o = sbvqa(&[
            "corrupt",
            "--manifest",
            p(&manifest),
            "--noise-bank",
            p(&noise),
            "--out",
            p(out),
            "--level",
            "0.1,30%",
            "--seed",
            "9",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ta = tree(&a);
    assert_eq!(ta.len(), 40 * 2 + 1);
    assert_eq!(ta, tree(&b));
}

#[test]
fn level_out_of_range_is_rejected() {
    let data = tempfile::tempdir().unwrap();
    gen_data(data.path());
    let o = sbvqa(&[
        "corrupt",
        "--manifest",
        p(&data.path().join("manifest.jsonl")),
        "--noise-bank",
        p(&data.path().join("noise")),
        "--out",
        p(&data.path().join("c")),
        "--level",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[0, 1]"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_exits_1() {
    let o = sbvqa(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn every_subcommand_has_help() {
    for cmd in [
        "gen-data", "corrupt", "train", "evaluate", "sweep", "wer", "zs-split", "inspect",
    ] {
        let o = sbvqa(&[cmd, "--help"]);
        assert!(o.status.success(), "{cmd}");
        assert!(stdout(&o).contains("Usage"), "{cmd}");
    }
}

#[test]
fn inspect_rejects_unknown_files() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("junk.bin");
    std::fs::write(&f, b"JUNKJUNK").unwrap();
    let o = sbvqa(&["inspect", p(&f)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unrecognized"));
}

#[test]
fn inspect_wav() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("tone.wav");
    let samples = (0..32000).map(|i| 0.5 * (i as f64 * 0.05).sin()).collect();
    write_wav(&Waveform::new(samples, 16000).unwrap(), &f).unwrap();
    let o = sbvqa(&["inspect", p(&f)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("32000 samples, 16000 Hz, 2.000 s"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn inspect_default_speech_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("speech.ckpt");
    let spec = ModelSpec::Speech(SpeechModConfig::default());
    let model = spec.build(0).unwrap();
    write_checkpoint(model.params(), &f).unwrap();
    let o = sbvqa(&["inspect", p(&f)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for (i, shape) in [
        "[64, 1, 32]",
        "[32, 32, 64]",
        "[16, 64, 128]",
        "[8, 128, 256]",
        "[4, 256, 512]",
    ]
    .iter()
    .enumerate()
    {
        let line = text
            .lines()
            .find(|l| l.contains(&format!("conv{}.weight", i + 1)))
            .unwrap();
        assert!(line.contains(shape), "{line}");
    }
    assert!(text.contains(&format!("parameters: {}", spec.parameter_count())));
}

#[test]
fn end_to_end_text_run() {
    let data = tempfile::tempdir().unwrap();
    gen_data(data.path());
    let out = data.path().join("run");
    let manifest = data.path().join("manifest.jsonl");
    let features = data.path().join("features.vqaf");
    let common = [
        "--model",
        "text",
        "--manifest",
        p(&manifest),
        "--features",
        p(&features),
        "--out",
        p(&out),
        "--set",
        "top_answers=16",
        "--set",
        "embed_dim=8",
        "--set",
        "lstm_hidden=8",
        "--set",
        "fused_dim=8",
        "--set",
        "hidden_dense=8",
    ];
    let mut train = vec!["train", "--epochs", "2", "--batch-size", "4"];
    train.extend_from_slice(&common);
    let o = sbvqa(&train);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["train_examples"], 32);
    assert!(out.join("best.ckpt").exists());

    let mut eval = vec!["evaluate", "--level", "0"];
    eval.extend_from_slice(&common);
    let o = sbvqa(&eval);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["counts"]["total"], 4, "{report}");
}

#[test]
fn seed_falls_back_to_environment() {
    let data = tempfile::tempdir().unwrap();
    gen_data(data.path());
    let manifest = data.path().join("manifest.jsonl");
    let noise = data.path().join("noise");
    let run = |out: &Path, seed: Option<&str>, env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_sbvqa"));
        cmd.args([
            "corrupt",
            "--manifest",
            p(&manifest),
            "--noise-bank",
            p(&noise),
            "--out",
            p(out),
            "--level",
            "0.5",
        ]);
        if let Some(s) = seed {
            cmd.args(["--seed", s]);
        }
        cmd.env_remove("SBVQA_SEED");
        if let Some(e) = env {
            cmd.env("SBVQA_SEED", e);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out.join("plan.jsonl")).unwrap()
    };
    let d = data.path();
    assert_eq!(run(&d.join("a"), Some("7"), None), run(&d.join("b"), None, Some("7")));
    assert_eq!(run(&d.join("c"), Some("0"), None), run(&d.join("e"), None, None));

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sbvqa"));
    let o = cmd
        .args([
            "corrupt",
            "--manifest",
            p(&manifest),
            "--noise-bank",
            p(&noise),
            "--out",
            p(&d.join("f")),
        ])
        .env("SBVQA_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
