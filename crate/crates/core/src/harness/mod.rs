//! Training, evaluation with per-category breakdown, noise sweeps and the
//! file-level pipeline used by the command line.

mod config;
mod inputs;
mod pipeline;
mod train;

pub use config::{RunConfig, RunPaths, KEYS as CONFIG_KEYS};
pub use inputs::{load_images, AudioFiles, ImageTable, MemoryAudio, OwnedQuestion, QuestionProvider, TextQuestions};
pub use pipeline::{
    blind_run, load_trained, run_evaluate, run_sweep, run_train, TrainRunSummary, TrainedModel, ANSWERS_FILE,
    BEST_CHECKPOINT, LOSS_FILE, MODEL_FILE, VOCAB_FILE,
};
pub use train::{prepare_examples, train, EpochStats, TrainConfig, TrainExample, TrainHooks, TrainOutcome};

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::{CorruptionError, NoiseLevel};
use crate::dataset::{AnswerType, AnswerVocabulary, DatasetError, QuestionRecord};
use crate::models::{ModelError, VqaModel};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Text(#[from] crate::text::TextError),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error("no training examples")]
    EmptyDataset,
    #[error("loss diverged at epoch {epoch}, batch {batch}{}", dump.as_ref().map(|p| format!("; parameters dumped to {p}")).unwrap_or_default())]
    Diverged {
        epoch: usize,
        batch: usize,
        dump: Option<String>,
    },
    #[error("question {question_id}: {msg}")]
    MissingInput { question_id: u64, msg: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// How a predicted answer string is scored against the human answers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMode {
    /// 1 when the prediction equals the first answer.
    #[default]
    Exact,
    /// `min(matching answers / 3, 1)`.
    Consensus,
}

impl FromStr for AccuracyMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exact" => Ok(Self::Exact),
            "consensus" | "vqa" => Ok(Self::Consensus),
            other => Err(format!("unknown accuracy mode `{other}` (exact|consensus)")),
        }
    }
}

pub fn accuracy(predicted: &str, answers: &[String], mode: AccuracyMode) -> f64 {
    match mode {
        AccuracyMode::Exact => f64::from(answers.first().is_some_and(|a| a == predicted)),
        AccuracyMode::Consensus => {
            let matches = answers.iter().filter(|a| *a == predicted).count();
            (matches as f64 / 3.0).min(1.0)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub total: usize,
    pub yes_no: usize,
    pub number: usize,
    pub other: usize,
}

/// Outcome for one question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: u64,
    /// `None` when the input was missing or the model failed on it.
    pub predicted: Option<String>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub noise_level: f64,
    pub all: f64,
    pub yes_no: f64,
    pub number: f64,
    pub other: f64,
    pub counts: CategoryCounts,
    /// Questions scored 0 because their input could not be produced.
    pub missing: usize,
    #[serde(skip)]
    pub results: Vec<QuestionResult>,
}

impl EvalReport {
    /// Builds the report from per-question results; `types[i]` is the
    /// category of `results[i]`.
    pub fn from_results(
        model: &str,
        split: &str,
        noise_level: f64,
        types: &[AnswerType],
        results: Vec<QuestionResult>,
        missing: usize,
    ) -> Self {
        let mut sums = [0.0f64; 3];
        let mut ns = [0usize; 3];
        for (t, r) in types.iter().zip(&results) {
            let k = category_slot(*t);
            sums[k] += r.score;
            ns[k] += 1;
        }
        let total: usize = ns.iter().sum();
        let frac = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        Self {
            model: model.to_string(),
            split: split.to_string(),
            noise_level,
            all: frac(sums.iter().sum(), total),
            yes_no: frac(sums[0], ns[0]),
            number: frac(sums[1], ns[1]),
            other: frac(sums[2], ns[2]),
            counts: CategoryCounts {
                total,
                yes_no: ns[0],
                number: ns[1],
                other: ns[2],
            },
            missing,
            results,
        }
    }

    pub fn category(&self, t: AnswerType) -> f64 {
        match t {
            AnswerType::YesNo => self.yes_no,
            AnswerType::Number => self.number,
            AnswerType::Other => self.other,
        }
    }

    /// `|All · N − Σ acc_c · N_c|`; zero up to rounding.
    pub fn consistency_error(&self) -> f64 {
        let c = &self.counts;
        let weighted = self.yes_no * c.yes_no as f64 + self.number * c.number as f64 + self.other * c.other as f64;
        (self.all * c.total as f64 - weighted).abs()
    }
}

fn category_slot(t: AnswerType) -> usize {
    match t {
        AnswerType::YesNo => 0,
        AnswerType::Number => 1,
        AnswerType::Other => 2,
    }
}

/// Anything that maps a question and image to a class index.
pub trait Predictor: Sync {
    fn name(&self) -> String;
    /// Blind predictors are handed a placeholder image.
    fn is_blind(&self) -> bool;
    fn predict(&self, question: &OwnedQuestion, image: &Tensor) -> Result<usize>;
}

impl Predictor for VqaModel {
    fn name(&self) -> String {
        VqaModel::name(self)
    }

    fn is_blind(&self) -> bool {
        VqaModel::is_blind(self)
    }

    fn predict(&self, question: &OwnedQuestion, image: &Tensor) -> Result<usize> {
        Ok(self.forward(question.as_input(), image)?.answer_index)
    }
}

/// What to evaluate against.
pub struct EvalSet<'a> {
    pub split: &'a str,
    pub records: &'a [QuestionRecord],
    pub images: &'a ImageTable,
    pub answers: &'a AnswerVocabulary,
    pub mode: AccuracyMode,
}

/// Scores every record at `level`. Questions whose input is missing score
/// 0 and are counted in `missing`. Work fans out over the rayon pool; the
/// report does not depend on the number of workers.
pub fn evaluate(
    model: &dyn Predictor,
    set: &EvalSet<'_>,
    provider: &dyn QuestionProvider,
    level: NoiseLevel,
) -> EvalReport {
    let blank = Tensor::scalar(0.0);
    let outcomes: Vec<(QuestionResult, bool)> = set
        .records
        .par_iter()
        .map(|r| {
            let predicted = provider.question(r, level).and_then(|q| {
                let image = if model.is_blind() {
                    &blank
                } else {
                    set.images.get(r.image_id)?
                };
                model.predict(&q, image)
            });
            match predicted {
                Ok(index) => {
                    let answer = set.answers.answer(index).unwrap_or_default().to_string();
                    let score = accuracy(&answer, &r.answers, set.mode);
                    (
                        QuestionResult {
                            question_id: r.question_id,
                            predicted: Some(answer),
                            score,
                        },
                        false,
                    )
                }
                Err(e) => {
                    log::debug!("question {}: {e}", r.question_id);
                    (
                        QuestionResult {
                            question_id: r.question_id,
                            predicted: None,
                            score: 0.0,
                        },
                        true,
                    )
                }
            }
        })
        .collect();
    let missing = outcomes.iter().filter(|(_, m)| *m).count();
    if missing > 0 {
        log::warn!(
            "{missing} of {} question(s) had no usable input at noise {level} and were scored 0",
            set.records.len()
        );
    }
    let types: Vec<AnswerType> = set.records.iter().map(|r| r.answer_type).collect();
    let results = outcomes.into_iter().map(|(r, _)| r).collect();
    EvalReport::from_results(&model.name(), set.split, level.value(), &types, results, missing)
}

/// One report per noise level, ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<EvalReport>,
}

impl SweepReport {
    pub const CSV_HEADER: &'static str = "noise_pct,all,yn,number,other";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let pct = NoiseLevel::new(r.noise_level)
                .map(|l| l.percent_label())
                .unwrap_or_default();
            let _ = writeln!(out, "{pct},{:.6},{:.6},{:.6},{:.6}", r.all, r.yes_no, r.number, r.other);
        }
        out
    }
}

/// Evaluates one fixed model at each level, sorted ascending with
/// duplicates removed.
pub fn noise_sweep(
    model: &dyn Predictor,
    set: &EvalSet<'_>,
    provider: &dyn QuestionProvider,
    levels: &[NoiseLevel],
) -> SweepReport {
    let mut levels = levels.to_vec();
    levels.sort_by(|a, b| a.value().total_cmp(&b.value()));
    levels.dedup();
    SweepReport {
        rows: levels.iter().map(|&l| evaluate(model, set, provider, l)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn answers(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn accuracy_modes() {
        let ten = answers(&["cat"; 10]);
        assert_eq!(accuracy("cat", &ten, AccuracyMode::Consensus), 1.0);
        assert_eq!(accuracy("dog", &ten, AccuracyMode::Consensus), 0.0);
        let two = answers(&["cat", "dog", "cat", "cow", "cow", "cow", "cow", "cow", "cow", "cow"]);
        assert!((accuracy("cat", &two, AccuracyMode::Consensus) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy("cat", &two, AccuracyMode::Exact), 1.0);
        assert_eq!(accuracy("dog", &two, AccuracyMode::Exact), 0.0);
    }

    #[test]
    fn report_weighting_is_consistent() {
        let types = [
            AnswerType::YesNo,
            AnswerType::YesNo,
            AnswerType::Number,
            AnswerType::Other,
            AnswerType::Other,
        ];
        let scores = [1.0, 0.0, 1.0, 1.0, 2.0 / 3.0];
        let results = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| QuestionResult {
                question_id: i as u64,
                predicted: Some("x".into()),
                score: s,
            })
            .collect();
        let r = EvalReport::from_results("m", "val", 0.0, &types, results, 0);
        assert_eq!(r.counts.total, 5);
        assert_eq!(r.yes_no, 0.5);
        assert!((r.other - 5.0 / 6.0).abs() < 1e-15);
        assert!(r.consistency_error() < 1e-9);
    }

    #[test]
    fn csv_layout() {
        let r = EvalReport::from_results("m", "val", 0.3, &[], vec![], 0);
        let s = SweepReport { rows: vec![r] };
        let csv = s.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "noise_pct,all,yn,number,other");
        assert!(lines[1].starts_with("30,"));
        assert_eq!(lines.len(), 2);
    }
}
