use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use super::{HarnessError, Result};
use crate::audio::{self, ScaledWaveform, Waveform, WORKING_RATE};
use crate::corruption::{corrupt_levels, corrupted_path, CorruptionPlan, NoiseBank, NoiseLevel, Normalization};
use crate::dataset::{DatasetError, FeatureStore, QuestionRecord};
use crate::models::QuestionInput;
use crate::tensor::Tensor;
use crate::text::{encode, Transcriber, Vocabulary};

/// Model-ready question, owned.
#[derive(Clone, Debug, PartialEq)]
pub enum OwnedQuestion {
    Audio(ScaledWaveform),
    Tokens(crate::text::EncodedQuestion),
}

impl OwnedQuestion {
    pub fn as_input(&self) -> QuestionInput<'_> {
        match self {
            Self::Audio(w) => QuestionInput::Audio(w),
            Self::Tokens(q) => QuestionInput::Tokens(q),
        }
    }
}

/// Produces a question's model input at a noise level.
pub trait QuestionProvider: Sync {
    fn question(&self, record: &QuestionRecord, level: NoiseLevel) -> Result<OwnedQuestion>;
}

fn level_key(level: NoiseLevel) -> i64 {
    (level.value() * 10_000.0).round() as i64
}

/// Clean audio under `base` (the record's `audio_path`) at level 0, and
/// `<corrupted_dir>/<id>_<pct>.wav` at other levels.
#[derive(Clone, Debug)]
pub struct AudioFiles {
    pub base: PathBuf,
    pub corrupted_dir: Option<PathBuf>,
}

impl QuestionProvider for AudioFiles {
    fn question(&self, record: &QuestionRecord, level: NoiseLevel) -> Result<OwnedQuestion> {
        let path = if level.value() == 0.0 {
            record.resolve_audio(&self.base)
        } else {
            let dir = self.corrupted_dir.as_ref().ok_or_else(|| HarnessError::MissingInput {
                question_id: record.question_id,
                msg: format!("no corrupted audio directory for noise {level}"),
            })?;
            corrupted_path(dir, record.question_id, level)
        };
        let wave = audio::read_wav(&path)
            .and_then(|w| audio::resample(&w, WORKING_RATE))
            .map_err(|e| HarnessError::MissingInput {
                question_id: record.question_id,
                msg: e.to_string(),
            })?;
        Ok(OwnedQuestion::Audio(audio::scale_amplitude(&wave)))
    }
}

/// Waveforms held in memory, keyed by question and level.
#[derive(Clone, Debug, Default)]
pub struct MemoryAudio {
    waves: HashMap<(u64, i64), ScaledWaveform>,
}

impl MemoryAudio {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, question_id: u64, level: NoiseLevel, wave: &Waveform) -> Result<()> {
        let wave = audio::resample(wave, WORKING_RATE)?;
        self.waves
            .insert((question_id, level_key(level)), audio::scale_amplitude(&wave));
        Ok(())
    }

    /// Clean audio at level 0 plus corrupted copies at every other level,
    /// with noise clips assigned by [`CorruptionPlan::draw`] from `seed`.
    pub fn from_waves(
        questions: &[(u64, &Waveform)],
        bank: &NoiseBank,
        levels: &[NoiseLevel],
        seed: u64,
        normalization: Normalization,
    ) -> Result<Self> {
        let ids: Vec<u64> = questions.iter().map(|(id, _)| *id).collect();
        let plan = CorruptionPlan::draw(&ids, bank.len(), seed)?;
        let noisy: Vec<NoiseLevel> = levels.iter().copied().filter(|l| l.value() > 0.0).collect();
        let mut out = Self::new();
        for (&(id, wave), &(_, clip)) in questions.iter().zip(&plan.assignments) {
            out.insert(id, NoiseLevel::default(), wave)?;
            let wave = audio::resample(wave, WORKING_RATE)?;
            let (mixed, _) = corrupt_levels(&wave, &bank.entries[clip].wave, &noisy, normalization)?;
            for (m, &l) in mixed.iter().zip(&noisy) {
                out.insert(id, l, m)?;
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }
}

impl QuestionProvider for MemoryAudio {
    fn question(&self, record: &QuestionRecord, level: NoiseLevel) -> Result<OwnedQuestion> {
        self.waves
            .get(&(record.question_id, level_key(level)))
            .map(|w| OwnedQuestion::Audio(w.clone()))
            .ok_or_else(|| HarnessError::MissingInput {
                question_id: record.question_id,
                msg: format!("no audio at noise {level}"),
            })
    }
}

/// Token input for the text model: a transcript when one exists for the
/// level, otherwise the original question text at level 0.
#[derive(Clone)]
pub struct TextQuestions {
    pub vocab: Vocabulary,
    pub max_len: usize,
    pub transcriber: Option<Arc<dyn Transcriber>>,
}

impl QuestionProvider for TextQuestions {
    fn question(&self, record: &QuestionRecord, level: NoiseLevel) -> Result<OwnedQuestion> {
        let transcript = self
            .transcriber
            .as_ref()
            .and_then(|t| t.transcribe(record.question_id, level.value()));
        let text = match transcript {
            Some(t) => t,
            None if level.value() == 0.0 => record.question_text.clone(),
            None => {
                return Err(HarnessError::MissingInput {
                    question_id: record.question_id,
                    msg: format!("no transcript at noise {level}"),
                })
            }
        };
        Ok(OwnedQuestion::Tokens(encode(&text, &self.vocab, self.max_len)?))
    }
}

/// Image features by image id, as model inputs.
#[derive(Clone, Debug, Default)]
pub struct ImageTable {
    features: HashMap<u64, Tensor>,
}

impl ImageTable {
    pub fn from_f32<'a>(entries: impl IntoIterator<Item = (u64, &'a [f32])>) -> Self {
        Self {
            features: entries
                .into_iter()
                .map(|(id, v)| (id, Tensor::from_vec(v.iter().map(|&x| f64::from(x)).collect())))
                .collect(),
        }
    }

    pub fn get(&self, image_id: u64) -> Result<&Tensor> {
        self.features
            .get(&image_id)
            .ok_or(HarnessError::Dataset(DatasetError::UnknownImage(image_id)))
    }

    pub fn insert(&mut self, image_id: u64, feature: Tensor) {
        self.features.insert(image_id, feature);
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Reads the features of every image the records refer to.
pub fn load_images(store: &FeatureStore, records: &[QuestionRecord]) -> Result<ImageTable> {
    let mut table = ImageTable::default();
    for r in records {
        if table.features.contains_key(&r.image_id) {
            continue;
        }
        table.insert(r.image_id, store.get_tensor(r.image_id)?);
    }
    Ok(table)
}
