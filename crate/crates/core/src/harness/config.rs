//! Plain-text run configuration: one `key = value` per line, `#` starts a
//! comment.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{AccuracyMode, HarnessError, Result, TrainConfig};
use crate::corruption::{parse_levels, NoiseLevel, Normalization};
use crate::dataset::{LabelMode, Split};
use crate::models::{ConvStackSpec, HeadConfig, ModelKind, ModelSpec, Padding, SpeechModConfig, TextModConfig};
use crate::text::DEFAULT_MAX_QUESTION_LEN;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    /// Base for relative `audio_path`s; defaults to the manifest's directory.
    pub audio_dir: Option<PathBuf>,
    pub noise_bank: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
    /// Corrupted WAVs (`<id>_<pct>.wav`); defaults to `<out_dir>/corrupted`.
    pub corrupted_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub blind: bool,
    pub train: TrainConfig,
    pub max_question_len: usize,
    pub noise_levels: Vec<NoiseLevel>,
    pub accuracy_mode: AccuracyMode,
    /// Split whose accuracy picks the best checkpoint; `None` keeps the last.
    pub selection_split: Option<Split>,
    pub eval_split: Split,
    pub label_mode: LabelMode,
    pub top_answers: usize,
    pub normalization: Normalization,
    pub padding: Padding,
    pub conv_filters: [usize; 5],
    pub lstm_hidden: usize,
    pub embed_dim: usize,
    pub fused_dim: usize,
    pub hidden_dense: usize,
    pub workers: Option<usize>,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let head = HeadConfig::default();
        Self {
            model: ModelKind::Speech,
            blind: false,
            train: TrainConfig::default(),
            max_question_len: DEFAULT_MAX_QUESTION_LEN,
            noise_levels: NoiseLevel::sweep(),
            accuracy_mode: AccuracyMode::Exact,
            selection_split: Some(Split::Val),
            eval_split: Split::TestDev,
            label_mode: LabelMode::First,
            top_answers: 1000,
            normalization: Normalization::Peak,
            padding: Padding::Fixed,
            conv_filters: [32, 64, 128, 256, 512],
            lstm_hidden: head.lstm_hidden,
            embed_dim: 512,
            fused_dim: head.fused_dim,
            hidden_dense: head.hidden_dense,
            workers: None,
            paths: RunPaths::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "model",
    "blind",
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "epsilon",
    "decay",
    "seed",
    "checkpoint_every",
    "max_question_len",
    "noise_levels",
    "accuracy_mode",
    "selection_split",
    "eval_split",
    "label_mode",
    "top_answers",
    "normalization",
    "padding",
    "conv_filters",
    "lstm_hidden",
    "embed_dim",
    "fused_dim",
    "hidden_dense",
    "workers",
    "manifest",
    "features",
    "audio_dir",
    "noise_bank",
    "transcripts",
    "corrupted_dir",
    "out_dir",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("{key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("{key}: expected true or false, got `{other}`")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(super::io_err(path))?;
        Self::parse(&text)
    }

    /// Sets one key; the error message names the key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let path = || Some(PathBuf::from(value));
        match key {
            "model" => self.model = parse(key, value)?,
            "blind" => self.blind = parse_bool(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "lr" => self.train.adam.lr = parse(key, value)?,
            "beta1" => self.train.adam.beta1 = parse(key, value)?,
            "beta2" => self.train.adam.beta2 = parse(key, value)?,
            "epsilon" => self.train.adam.epsilon = parse(key, value)?,
            "decay" => self.train.adam.decay = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "checkpoint_every" => self.train.checkpoint_every = parse(key, value)?,
            "max_question_len" => self.max_question_len = parse(key, value)?,
            "noise_levels" => self.noise_levels = parse_levels(value).map_err(|e| format!("{key}: {e}"))?,
            "accuracy_mode" => self.accuracy_mode = parse(key, value)?,
            "selection_split" => {
                self.selection_split = match value {
                    "none" | "last" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "eval_split" => self.eval_split = parse(key, value)?,
            "label_mode" => self.label_mode = parse(key, value)?,
            "top_answers" => self.top_answers = parse(key, value)?,
            "normalization" => self.normalization = parse(key, value)?,
            "padding" => self.padding = parse(key, value)?,
            "conv_filters" => {
                let v: Vec<usize> = value
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect::<std::result::Result<_, _>>()?;
                self.conv_filters = v
                    .try_into()
                    .map_err(|v: Vec<usize>| format!("{key}: expected 5 values, got {}", v.len()))?;
            }
            "lstm_hidden" => self.lstm_hidden = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "fused_dim" => self.fused_dim = parse(key, value)?,
            "hidden_dense" => self.hidden_dense = parse(key, value)?,
            "workers" => self.workers = Some(parse(key, value)?),
            "manifest" => self.paths.manifest = path(),
            "features" => self.paths.features = path(),
            "audio_dir" => self.paths.audio_dir = path(),
            "noise_bank" => self.paths.noise_bank = path(),
            "transcripts" => self.paths.transcripts = path(),
            "corrupted_dir" => self.paths.corrupted_dir = path(),
            "out_dir" => self.paths.out_dir = path(),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Text form that [`RunConfig::parse`] reads back to an equal config.
    pub fn to_text(&self) -> String {
        let a = &self.train.adam;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model", self.model.to_string());
        kv("blind", self.blind.to_string());
        kv("epochs", self.train.epochs.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("lr", a.lr.to_string());
        kv("beta1", a.beta1.to_string());
        kv("beta2", a.beta2.to_string());
        kv("epsilon", a.epsilon.to_string());
        kv("decay", a.decay.to_string());
        kv("seed", self.train.seed.to_string());
        kv("checkpoint_every", self.train.checkpoint_every.to_string());
        kv("max_question_len", self.max_question_len.to_string());
        kv(
            "noise_levels",
            self.noise_levels
                .iter()
                .map(|l| l.value().to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv(
            "accuracy_mode",
            match self.accuracy_mode {
                AccuracyMode::Exact => "exact",
                AccuracyMode::Consensus => "consensus",
            }
            .into(),
        );
        kv(
            "selection_split",
            self.selection_split.map_or("none".into(), |s| s.to_string()),
        );
        kv("eval_split", self.eval_split.to_string());
        kv(
            "label_mode",
            match self.label_mode {
                LabelMode::First => "first",
                LabelMode::Majority => "majority",
            }
            .into(),
        );
        kv("top_answers", self.top_answers.to_string());
        kv(
            "normalization",
            match self.normalization {
                Normalization::Peak => "peak",
                Normalization::Rms => "rms",
            }
            .into(),
        );
        kv(
            "padding",
            match self.padding {
                Padding::Fixed => "fixed",
                Padding::Same => "same",
            }
            .into(),
        );
        kv(
            "conv_filters",
            self.conv_filters
                .iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("lstm_hidden", self.lstm_hidden.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("fused_dim", self.fused_dim.to_string());
        kv("hidden_dense", self.hidden_dense.to_string());
        if let Some(w) = self.workers {
            kv("workers", w.to_string());
        }
        let p = &self.paths;
        for (k, v) in [
            ("manifest", &p.manifest),
            ("features", &p.features),
            ("audio_dir", &p.audio_dir),
            ("noise_bank", &p.noise_bank),
            ("transcripts", &p.transcripts),
            ("corrupted_dir", &p.corrupted_dir),
            ("out_dir", &p.out_dir),
        ] {
            if let Some(v) = v {
                kv(k, v.display().to_string());
            }
        }
        s
    }

    /// Model description for the given data sizes. `vocab_size` is only
    /// used by the text model.
    pub fn model_spec(&self, image_dim: usize, num_answers: usize, vocab_size: usize) -> ModelSpec {
        let head = HeadConfig {
            lstm_hidden: self.lstm_hidden,
            image_dim,
            fused_dim: self.fused_dim,
            hidden_dense: self.hidden_dense,
            num_answers,
            blind: self.blind,
        };
        match self.model {
            ModelKind::Speech => ModelSpec::Speech(SpeechModConfig {
                conv: ConvStackSpec {
                    padding: self.padding,
                    ..ConvStackSpec::with_filters(self.conv_filters)
                },
                head,
            }),
            ModelKind::Text => ModelSpec::Text(TextModConfig {
                vocab_size,
                embed_dim: self.embed_dim,
                head,
            }),
        }
    }
}
