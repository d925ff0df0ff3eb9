//! File-level runs: everything is read from and written to the paths in a
//! [`RunConfig`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    evaluate, io_err, load_images, noise_sweep, train, AudioFiles, EvalReport, EvalSet, HarnessError, ImageTable,
    QuestionProvider, Result, RunConfig, SweepReport, TextQuestions, TrainHooks, TrainOutcome,
};
use crate::corruption::{corrupt_corpus, corrupted_path, CorpusItem, CorruptOptions, NoiseBank, NoiseLevel};
use crate::dataset::{
    build_answer_vocab, filter_train, load_manifest, records_in_split, AnswerVocabulary, FeatureStore, QuestionRecord,
    Split,
};
use crate::models::{ModelKind, ModelSpec, VqaModel};
use crate::tensor::{read_checkpoint, ParamSet};
use crate::text::{FileTranscriber, Transcriber, Vocabulary};

pub const MODEL_FILE: &str = "model.json";
pub const ANSWERS_FILE: &str = "answers.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOSS_FILE: &str = "loss.csv";

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| HarnessError::Config(format!("`{key}` is not set")))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, body + "\n").map_err(io_err(path))
}

struct Corpus {
    records: Vec<QuestionRecord>,
    audio_base: PathBuf,
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let manifest = require(&cfg.paths.manifest, "manifest")?;
    let records = load_manifest(manifest)?.records;
    let audio_base = cfg
        .paths
        .audio_dir
        .clone()
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default());
    Ok(Corpus { records, audio_base })
}

fn corrupted_dir(cfg: &RunConfig, out_dir: &Path) -> PathBuf {
    cfg.paths
        .corrupted_dir
        .clone()
        .unwrap_or_else(|| out_dir.join("corrupted"))
}

fn open_images(cfg: &RunConfig, blind: bool, records: &[QuestionRecord]) -> Result<(ImageTable, usize)> {
    match (&cfg.paths.features, blind) {
        (Some(p), false) => {
            let store = FeatureStore::open(p)?;
            Ok((load_images(&store, records)?, store.dim()))
        }
        (None, false) => Err(HarnessError::Config("`features` is not set".into())),
        (Some(p), true) => Ok((ImageTable::default(), FeatureStore::open(p)?.dim().max(1))),
        (None, true) => Ok((ImageTable::default(), 1)),
    }
}

fn provider(
    cfg: &RunConfig,
    kind: ModelKind,
    vocab: Option<&Vocabulary>,
    audio_base: &Path,
    out_dir: &Path,
) -> Result<Box<dyn QuestionProvider>> {
    Ok(match kind {
        ModelKind::Speech => Box::new(AudioFiles {
            base: audio_base.to_path_buf(),
            corrupted_dir: Some(corrupted_dir(cfg, out_dir)),
        }),
        ModelKind::Text => {
            let transcriber = match &cfg.paths.transcripts {
                Some(p) => Some(Arc::new(FileTranscriber::load(p)?) as Arc<dyn Transcriber>),
                None => None,
            };
            Box::new(TextQuestions {
                vocab: vocab
                    .cloned()
                    .ok_or_else(|| HarnessError::Config("text model without a vocabulary".into()))?,
                max_len: cfg.max_question_len,
                transcriber,
            })
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRunSummary {
    pub model: String,
    pub parameters: usize,
    pub train_examples: usize,
    /// Training records dropped because their label is outside the
    /// answer vocabulary.
    pub dropped: usize,
    pub outcome: TrainOutcome,
}

/// Trains per the config and writes `model.json`, `answers.json`,
/// `vocab.json` (text model), checkpoints, `loss.csv`, `run.cfg` and
/// `train.json` into `out_dir`.
pub fn run_train(cfg: &RunConfig) -> Result<TrainRunSummary> {
    let out_dir = require(&cfg.paths.out_dir, "out_dir")?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let corpus = load_corpus(cfg)?;
    let train_records = records_in_split(&corpus.records, Split::Train);
    if train_records.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let answers = build_answer_vocab(&train_records, cfg.top_answers, cfg.label_mode)?;
    let kept = filter_train(&train_records, &answers);
    let selection: Vec<QuestionRecord> = cfg
        .selection_split
        .map(|s| records_in_split(&corpus.records, s))
        .unwrap_or_default();
    let needed: Vec<QuestionRecord> = kept.iter().chain(&selection).cloned().collect();
    let (images, image_dim) = open_images(cfg, cfg.blind, &needed)?;

    let vocab = match cfg.model {
        ModelKind::Text => Some(Vocabulary::build(
            &kept.iter().map(|r| r.question_text.as_str()).collect::<Vec<_>>(),
        )?),
        ModelKind::Speech => None,
    };
    let spec = cfg.model_spec(image_dim, answers.len(), vocab.as_ref().map_or(0, Vocabulary::len));
    let mut model = spec.build(cfg.train.seed)?;
    let provider = provider(cfg, cfg.model, vocab.as_ref(), &corpus.audio_base, out_dir)?;
    let examples = super::prepare_examples(&kept, provider.as_ref(), &images, &answers, cfg.blind)?;

    let split_name = cfg.selection_split.map(|s| s.to_string()).unwrap_or_default();
    let select = |m: &VqaModel| {
        let set = EvalSet {
            split: &split_name,
            records: &selection,
            images: &images,
            answers: &answers,
            mode: cfg.accuracy_mode,
        };
        evaluate(m, &set, provider.as_ref(), NoiseLevel::default()).all
    };
    let hooks = TrainHooks {
        out_dir: Some(out_dir),
        select: if selection.is_empty() {
            if cfg.selection_split.is_some() {
                log::warn!("selection split is empty; keeping the last checkpoint");
            }
            None
        } else {
            Some(&select)
        },
    };
    let outcome = train(&mut model, &examples, &cfg.train, &hooks)?;

    write_json(&spec, &out_dir.join(MODEL_FILE))?;
    answers.save(&out_dir.join(ANSWERS_FILE))?;
    if let Some(v) = &vocab {
        write_json(v, &out_dir.join(VOCAB_FILE))?;
    }
    let mut loss = String::from("epoch,loss\n0,");
    loss.push_str(&format!("{}\n", outcome.initial_loss));
    for e in &outcome.epochs {
        loss.push_str(&format!("{},{}\n", e.epoch, e.mean_loss));
    }
    let loss_path = out_dir.join(LOSS_FILE);
    std::fs::write(&loss_path, loss).map_err(io_err(&loss_path))?;
    let cfg_path = out_dir.join("run.cfg");
    std::fs::write(&cfg_path, cfg.to_text()).map_err(io_err(&cfg_path))?;
    let summary = TrainRunSummary {
        model: model.name(),
        parameters: model.params().scalar_count(),
        train_examples: examples.len(),
        dropped: train_records.len() - kept.len(),
        outcome,
    };
    write_json(&summary, &out_dir.join("train.json"))?;
    Ok(summary)
}

/// A model reloaded from a training output directory.
pub struct TrainedModel {
    pub model: VqaModel,
    pub answers: AnswerVocabulary,
    pub vocab: Option<Vocabulary>,
}

pub fn load_trained(dir: &Path) -> Result<TrainedModel> {
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(io_err(&p))
    };
    let bad = |name: &str, e: serde_json::Error| HarnessError::Config(format!("{}: {e}", dir.join(name).display()));
    let spec: ModelSpec = serde_json::from_str(&read(MODEL_FILE)?).map_err(|e| bad(MODEL_FILE, e))?;
    let params = ParamSet::from_entries(&read_checkpoint(&dir.join(BEST_CHECKPOINT))?)?;
    let model = spec.with_params(params)?;
    let answers = AnswerVocabulary::load(&dir.join(ANSWERS_FILE))?;
    let vocab = match spec.kind() {
        ModelKind::Text => Some(serde_json::from_str(&read(VOCAB_FILE)?).map_err(|e| bad(VOCAB_FILE, e))?),
        ModelKind::Speech => None,
    };
    Ok(TrainedModel { model, answers, vocab })
}

struct EvalContext {
    trained: TrainedModel,
    records: Vec<QuestionRecord>,
    images: ImageTable,
    provider: Box<dyn QuestionProvider>,
}

fn eval_context(cfg: &RunConfig) -> Result<EvalContext> {
    let out_dir = require(&cfg.paths.out_dir, "out_dir")?;
    let trained = load_trained(out_dir)?;
    let corpus = load_corpus(cfg)?;
    let records = records_in_split(&corpus.records, cfg.eval_split);
    let (images, _) = open_images(cfg, trained.model.is_blind(), &records)?;
    let provider = provider(
        cfg,
        trained.model.kind(),
        trained.vocab.as_ref(),
        &corpus.audio_base,
        out_dir,
    )?;
    Ok(EvalContext {
        trained,
        records,
        images,
        provider,
    })
}

/// Evaluates the trained model in `out_dir` on `eval_split` at `level`,
/// writing `eval_<pct>.json`. Missing corrupted audio is generated as in
/// [`run_sweep`].
pub fn run_evaluate(cfg: &RunConfig, level: NoiseLevel) -> Result<EvalReport> {
    let out_dir = require(&cfg.paths.out_dir, "out_dir")?;
    let ctx = eval_context(cfg)?;
    if ctx.trained.model.kind() == ModelKind::Speech {
        prepare_corrupted(cfg, out_dir, &ctx.records, &[level])?;
    }
    let split = cfg.eval_split.to_string();
    let set = EvalSet {
        split: &split,
        records: &ctx.records,
        images: &ctx.images,
        answers: &ctx.trained.answers,
        mode: cfg.accuracy_mode,
    };
    let report = evaluate(&ctx.trained.model, &set, ctx.provider.as_ref(), level);
    write_json(&report, &out_dir.join(format!("eval_{}.json", level.percent_label())))?;
    Ok(report)
}

/// Evaluates at every configured level. For the speech model, missing
/// corrupted audio is generated first when `noise_bank` is set. Writes
/// `sweep.csv` and `sweep.json`.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    let out_dir = require(&cfg.paths.out_dir, "out_dir")?;
    let ctx = eval_context(cfg)?;
    if ctx.trained.model.kind() == ModelKind::Speech {
        prepare_corrupted(cfg, out_dir, &ctx.records, &cfg.noise_levels)?;
    }
    let split = cfg.eval_split.to_string();
    let set = EvalSet {
        split: &split,
        records: &ctx.records,
        images: &ctx.images,
        answers: &ctx.trained.answers,
        mode: cfg.accuracy_mode,
    };
    let report = noise_sweep(&ctx.trained.model, &set, ctx.provider.as_ref(), &cfg.noise_levels);
    let csv_path = out_dir.join("sweep.csv");
    std::fs::write(&csv_path, report.to_csv()).map_err(io_err(&csv_path))?;
    write_json(&report, &out_dir.join("sweep.json"))?;
    Ok(report)
}

fn prepare_corrupted(cfg: &RunConfig, out_dir: &Path, records: &[QuestionRecord], levels: &[NoiseLevel]) -> Result<()> {
    let dir = corrupted_dir(cfg, out_dir);
    let levels: Vec<NoiseLevel> = levels.iter().copied().filter(|l| l.value() > 0.0).collect();
    let complete = records
        .iter()
        .all(|r| levels.iter().all(|&l| corrupted_path(&dir, r.question_id, l).exists()));
    if complete {
        return Ok(());
    }
    let Some(bank_dir) = &cfg.paths.noise_bank else {
        log::warn!("corrupted audio incomplete in {} and no noise_bank set", dir.display());
        return Ok(());
    };
    let bank = NoiseBank::load(bank_dir)?;
    let base = cfg
        .paths
        .audio_dir
        .clone()
        .or_else(|| {
            cfg.paths
                .manifest
                .as_ref()
                .and_then(|m| m.parent().map(Path::to_path_buf))
        })
        .unwrap_or_default();
    let items: Vec<CorpusItem> = records
        .iter()
        .map(|r| CorpusItem {
            question_id: r.question_id,
            audio_path: r.resolve_audio(&base),
        })
        .collect();
    let options = CorruptOptions {
        normalization: cfg.normalization,
    };
    corrupt_corpus(&items, &bank, &levels, cfg.train.seed, &dir, options)?;
    Ok(())
}

/// Trains and evaluates the image-free variant at noise 0.
pub fn blind_run(cfg: &RunConfig) -> Result<EvalReport> {
    let mut cfg = cfg.clone();
    cfg.blind = true;
    run_train(&cfg)?;
    run_evaluate(&cfg, NoiseLevel::default())
}
