//! Python bindings: WER, noise mixing, synthetic audio and data, model
//! construction and inference, and the training harness.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sbvqa::audio::{self, Waveform, WORKING_RATE};
use sbvqa::corruption::{self, NoiseLevel, Normalization};
use sbvqa::dataset::{generate_synthetic_dataset, AnswerSource, SyntheticSpec};
use sbvqa::harness::{self, RunConfig};
use sbvqa::models::{ConvStackSpec, HeadConfig, ModelSpec, QuestionInput, SpeechModConfig, TextModConfig, VqaModel};
use sbvqa::tensor::{write_checkpoint, Tensor};
use sbvqa::text::{self, Vocabulary, DEFAULT_MAX_QUESTION_LEN};

fn invalid(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn level(value: f64) -> PyResult<NoiseLevel> {
    NoiseLevel::new(value).map_err(invalid)
}

/// Word error rate with its edit counts.
#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Clone, Debug)]
pub struct Wer {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    pub wer: f64,
}

#[pymethods]
impl Wer {
    fn __repr__(&self) -> String {
        format!(
            "Wer(wer={:.4}, substitutions={}, deletions={}, insertions={}, ref_len={})",
            self.wer, self.substitutions, self.deletions, self.insertions, self.ref_len
        )
    }
}

impl From<text::WerBreakdown> for Wer {
    fn from(b: text::WerBreakdown) -> Self {
        Self {
            substitutions: b.substitutions,
            deletions: b.deletions,
            insertions: b.insertions,
            ref_len: b.ref_len,
            wer: b.wer,
        }
    }
}

/// Word error rate of one hypothesis.
#[pyfunction]
fn wer(reference: &str, hypothesis: &str) -> PyResult<Wer> {
    text::wer(reference, hypothesis).map(Wer::from).map_err(invalid)
}

/// Corpus word error rate over `(reference, hypothesis)` pairs.
#[pyfunction]
fn wer_corpus(pairs: Vec<(String, String)>) -> PyResult<Wer> {
    text::wer_corpus(&pairs).map(Wer::from).map_err(invalid)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    text::tokenize(text)
}

/// Parses `"0.1,20%,0.3"` into fractions.
#[pyfunction]
fn parse_levels(s: &str) -> PyResult<Vec<f64>> {
    Ok(corruption::parse_levels(s)
        .map_err(invalid)?
        .into_iter()
        .map(NoiseLevel::value)
        .collect())
}

/// The standard sweep, 0 through 0.5 in steps of 0.1.
#[pyfunction]
fn noise_sweep() -> Vec<f64> {
    NoiseLevel::sweep().into_iter().map(NoiseLevel::value).collect()
}

/// Normalizes both signals, fits the noise to the speech length and mixes
/// at `level`. Both inputs share `rate`.
#[pyfunction]
#[pyo3(signature = (speech, noise, level, rate = WORKING_RATE, normalization = "peak"))]
fn mix(speech: Vec<f64>, noise: Vec<f64>, level: f64, rate: u32, normalization: &str) -> PyResult<Vec<f64>> {
    let mode: Normalization = normalization.parse().map_err(invalid)?;
    let speech = Waveform::new(speech, rate).map_err(invalid)?;
    let noise = Waveform::new(noise, rate).map_err(invalid)?;
    let (mut mixed, _) = corruption::corrupt_levels(&speech, &noise, &[self::level(level)?], mode).map_err(invalid)?;
    Ok(mixed.remove(0).into_samples())
}

/// Tone sequence standing in for a spoken question.
#[pyfunction]
#[pyo3(signature = (text, rate = WORKING_RATE, seed = 0))]
fn synth_speech(text: &str, rate: u32, seed: u64) -> PyResult<Vec<f64>> {
    audio::synth_speech(text, rate, seed, &Default::default())
        .map(Waveform::into_samples)
        .map_err(invalid)
}

/// Returns `(samples, rate)`.
#[pyfunction]
fn read_wav(path: PathBuf) -> PyResult<(Vec<f64>, u32)> {
    let wave = audio::read_wav(&path).map_err(invalid)?;
    let rate = wave.rate();
    Ok((wave.into_samples(), rate))
}

#[pyfunction]
#[pyo3(signature = (path, samples, rate = WORKING_RATE))]
fn write_wav(path: PathBuf, samples: Vec<f64>, rate: u32) -> PyResult<()> {
    let wave = Waveform::new(samples, rate).map_err(invalid)?;
    audio::write_wav(&wave, &path).map_err(invalid)
}

/// Writes a synthetic corpus to `out` and returns the question count.
#[pyfunction]
#[pyo3(signature = (out, train = 32, val = 0, test_dev = 0, image_dim = 4096, seed = 0, answer_source = "image"))]
fn generate_dataset(
    out: PathBuf,
    train: usize,
    val: usize,
    test_dev: usize,
    image_dim: usize,
    seed: u64,
    answer_source: &str,
) -> PyResult<usize> {
    let spec = SyntheticSpec {
        train,
        val,
        test_dev,
        image_dim,
        seed,
        answer_source: answer_source.parse::<AnswerSource>().map_err(invalid)?,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic_dataset(&spec).map_err(invalid)?;
    ds.write(&out).map_err(runtime)?;
    Ok(ds.records.len())
}

fn run_config(config: &str) -> PyResult<RunConfig> {
    let cfg = RunConfig::parse(config).map_err(invalid)?;
    cfg.train.validate().map_err(invalid)?;
    Ok(cfg)
}

/// Trains from `key = value` config text; returns the summary as JSON.
#[pyfunction]
fn train(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = run_config(config)?;
    let summary = py.detach(|| harness::run_train(&cfg)).map_err(runtime)?;
    serde_json::to_string(&summary).map_err(runtime)
}

/// Evaluates a trained run at one noise level; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (config, level = 0.0))]
fn evaluate(py: Python<'_>, config: &str, level: f64) -> PyResult<String> {
    let cfg = run_config(config)?;
    let level = self::level(level)?;
    let report = py.detach(|| harness::run_evaluate(&cfg, level)).map_err(runtime)?;
    serde_json::to_string(&report).map_err(runtime)
}

/// Evaluates a trained run at every configured level; returns CSV.
#[pyfunction]
fn sweep(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = run_config(config)?;
    Ok(py.detach(|| harness::run_sweep(&cfg)).map_err(runtime)?.to_csv())
}

/// SpeechMod or TextMod, optionally with the answer and question
/// vocabularies of a trained run.
#[pyclass]
pub struct Model {
    model: VqaModel,
    answers: Option<Vec<String>>,
    vocab: Option<Vocabulary>,
    max_len: usize,
}

impl Model {
    fn wrap(model: VqaModel) -> Self {
        Self {
            model,
            answers: None,
            vocab: None,
            max_len: DEFAULT_MAX_QUESTION_LEN,
        }
    }

    fn image(&self, image: Option<Vec<f64>>) -> PyResult<Tensor> {
        match image {
            Some(v) => Ok(Tensor::from_vec(v)),
            None if self.model.is_blind() => Ok(Tensor::scalar(0.0)),
            None => Err(invalid("this model needs an image feature vector")),
        }
    }

    fn probs(&self, question: QuestionInput<'_>, image: Tensor) -> PyResult<Vec<f64>> {
        Ok(self.model.forward(question, &image).map_err(invalid)?.probs.into_data())
    }

    fn label(&self, probs: &[f64]) -> PyResult<String> {
        let answers = self
            .answers
            .as_ref()
            .ok_or_else(|| invalid("no answer vocabulary; load a trained run"))?;
        let best = Tensor::from_vec(probs.to_vec()).argmax();
        Ok(answers[best].clone())
    }
}

fn head(
    num_answers: usize,
    image_dim: usize,
    lstm_hidden: usize,
    fused_dim: usize,
    hidden_dense: usize,
    blind: bool,
) -> HeadConfig {
    HeadConfig {
        lstm_hidden,
        image_dim,
        fused_dim,
        hidden_dense,
        num_answers,
        blind,
    }
}

#[pymethods]
impl Model {
    /// Raw-waveform model with freshly initialized weights.
    #[staticmethod]
    #[pyo3(signature = (num_answers, image_dim = 4096, conv_filters = [32, 64, 128, 256, 512], lstm_hidden = 512, fused_dim = 512, hidden_dense = 1024, blind = false, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn speech(
        num_answers: usize,
        image_dim: usize,
        conv_filters: [usize; 5],
        lstm_hidden: usize,
        fused_dim: usize,
        hidden_dense: usize,
        blind: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = ModelSpec::Speech(SpeechModConfig {
            conv: ConvStackSpec::with_filters(conv_filters),
            head: head(num_answers, image_dim, lstm_hidden, fused_dim, hidden_dense, blind),
        });
        spec.build(seed).map(Self::wrap).map_err(invalid)
    }

    /// Token model with freshly initialized weights. `vocab_size` counts
    /// real tokens; index 0 is padding.
    #[staticmethod]
    #[pyo3(signature = (num_answers, vocab_size, image_dim = 4096, embed_dim = 512, lstm_hidden = 512, fused_dim = 512, hidden_dense = 1024, blind = false, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn text(
        num_answers: usize,
        vocab_size: usize,
        image_dim: usize,
        embed_dim: usize,
        lstm_hidden: usize,
        fused_dim: usize,
        hidden_dense: usize,
        blind: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = ModelSpec::Text(TextModConfig {
            vocab_size,
            embed_dim,
            head: head(num_answers, image_dim, lstm_hidden, fused_dim, hidden_dense, blind),
        });
        spec.build(seed).map(Self::wrap).map_err(invalid)
    }

    /// Loads the best checkpoint of a training run directory.
    #[staticmethod]
    fn load(run_dir: PathBuf) -> PyResult<Self> {
        let trained = harness::load_trained(&run_dir).map_err(invalid)?;
        let max_len = std::fs::read_to_string(run_dir.join("run.cfg"))
            .ok()
            .and_then(|t| RunConfig::parse(&t).ok())
            .map_or(DEFAULT_MAX_QUESTION_LEN, |c| c.max_question_len);
        Ok(Self {
            model: trained.model,
            answers: Some(trained.answers.answers().to_vec()),
            vocab: trained.vocab,
            max_len,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.model.kind().to_string()
    }

    #[getter]
    fn name(&self) -> String {
        self.model.name()
    }

    #[getter]
    fn num_answers(&self) -> usize {
        self.model.num_answers()
    }

    #[getter]
    fn blind(&self) -> bool {
        self.model.is_blind()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.model.spec().parameter_count()
    }

    /// Answer strings of a loaded run, if any.
    #[getter]
    fn answers(&self) -> Option<Vec<String>> {
        self.answers.clone()
    }

    /// Answer distribution for a waveform in [-1, 1]. Audio at other
    /// rates is resampled to 16 kHz first.
    #[pyo3(signature = (samples, image = None, rate = WORKING_RATE))]
    fn forward_audio(
        &self,
        py: Python<'_>,
        samples: Vec<f64>,
        image: Option<Vec<f64>>,
        rate: u32,
    ) -> PyResult<Vec<f64>> {
        let wave = Waveform::new(samples, rate).map_err(invalid)?;
        let wave = audio::resample(&wave, WORKING_RATE).map_err(invalid)?;
        let scaled = audio::scale_amplitude(&wave);
        let image = self.image(image)?;
        py.detach(|| self.probs(QuestionInput::Audio(&scaled), image))
    }

    /// Answer distribution for word indices (1-based; 0 is padding).
    #[pyo3(signature = (indices, image = None))]
    fn forward_tokens(&self, indices: Vec<usize>, image: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let encoded = text::EncodedQuestion {
            original_len: indices.len(),
            indices,
        };
        self.probs(QuestionInput::Tokens(&encoded), self.image(image)?)
    }

    /// Most likely answer string for a question given as text. Needs a
    /// loaded text run.
    #[pyo3(signature = (question, image = None))]
    fn answer_text(&self, question: &str, image: Option<Vec<f64>>) -> PyResult<String> {
        let vocab = self
            .vocab
            .as_ref()
            .ok_or_else(|| invalid("no question vocabulary; load a trained text run"))?;
        let encoded = text::encode(question, vocab, self.max_len).map_err(invalid)?;
        let probs = self.probs(QuestionInput::Tokens(&encoded), self.image(image)?)?;
        self.label(&probs)
    }

    /// Most likely answer string for a spoken question. Needs a loaded
    /// speech run.
    #[pyo3(signature = (samples, image = None, rate = WORKING_RATE))]
    fn answer_audio(&self, py: Python<'_>, samples: Vec<f64>, image: Option<Vec<f64>>, rate: u32) -> PyResult<String> {
        let probs = self.forward_audio(py, samples, image, rate)?;
        self.label(&probs)
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        write_checkpoint(self.model.params(), &path).map_err(runtime)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({}, {} parameters)",
            self.model.name(),
            self.model.spec().parameter_count()
        )
    }
}

#[pymodule]
fn sbvqa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("WORKING_RATE", WORKING_RATE)?;
    m.add_class::<Wer>()?;
    m.add_class::<Model>()?;
    for f in [
        wrap_pyfunction!(wer, m)?,
        wrap_pyfunction!(wer_corpus, m)?,
        wrap_pyfunction!(tokenize, m)?,
        wrap_pyfunction!(parse_levels, m)?,
        wrap_pyfunction!(noise_sweep, m)?,
        wrap_pyfunction!(mix, m)?,
        wrap_pyfunction!(synth_speech, m)?,
        wrap_pyfunction!(read_wav, m)?,
        wrap_pyfunction!(write_wav, m)?,
        wrap_pyfunction!(generate_dataset, m)?,
        wrap_pyfunction!(train, m)?,
        wrap_pyfunction!(evaluate, m)?,
        wrap_pyfunction!(sweep, m)?,
    ] {
        m.add_function(f)?;
    }
    Ok(())
}
