//! Template questions over planted image features, small enough to train
//! on a laptop but built so the answer is recoverable from the question
//! and the image together.
//!
//! Feature coordinates `[4t, 4t + 4)` belong to template `t`. Every block
//! holds a one-hot 1.0 at some answer slot, with the remaining coordinates
//! drawn from `[-0.5, 0.5]`; only the block of the question's own template
//! carries the true answer, so the image alone narrows the answer to one
//! candidate per template and the question picks among them.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io_err, write_features, write_manifest, AnswerType, DatasetError, QuestionRecord, Result, Split};
use crate::audio::{synth_speech, write_wav, SynthConfig, Waveform, WORKING_RATE};
use crate::corruption::{NoiseBank, NoiseEntry, NOISE_CATEGORIES};
use crate::text::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Template {
    /// Question text with an `{obj}` placeholder.
    pub question: &'static str,
    pub answer_type: AnswerType,
    pub answers: [&'static str; 4],
}

pub const TEMPLATES: [Template; 4] = [
    Template {
        question: "what color is the {obj}",
        answer_type: AnswerType::Other,
        answers: ["red", "blue", "green", "yellow"],
    },
    Template {
        question: "how many {obj} are there",
        answer_type: AnswerType::Number,
        answers: ["one", "two", "three", "four"],
    },
    Template {
        question: "is there a {obj}",
        answer_type: AnswerType::YesNo,
        answers: ["yes", "no", "maybe", "unsure"],
    },
    Template {
        question: "what animal is near the {obj}",
        answer_type: AnswerType::Other,
        answers: ["cat", "dog", "bird", "horse"],
    },
];

const OBJECTS: [&str; 8] = ["ball", "car", "tree", "house", "cup", "chair", "kite", "boat"];
const BLOCK: usize = 4;

/// Where the answer can be read from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSource {
    /// Planted in the image feature; the question selects the block.
    #[default]
    Image,
    /// Spoken as the last word of the question; image features are noise.
    Text,
}

impl std::str::FromStr for AnswerSource {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "image" => Ok(Self::Image),
            "text" => Ok(Self::Text),
            other => Err(format!("unknown answer source `{other}` (image|text)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train: usize,
    pub val: usize,
    pub test_dev: usize,
    pub image_dim: usize,
    pub seed: u64,
    pub answer_source: AnswerSource,
    pub synth: SynthConfig,
    /// Clips written per noise category.
    pub noise_clips: usize,
    pub noise_secs: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train: 32,
            val: 0,
            test_dev: 0,
            image_dim: 4096,
            seed: 0,
            answer_source: AnswerSource::Image,
            synth: SynthConfig::default(),
            noise_clips: 2,
            noise_secs: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test_dev
    }

    /// Distinct answers across all templates.
    pub fn num_answers() -> usize {
        TEMPLATES.len() * BLOCK
    }
}

/// Generated corpus held in memory; `audio[i]` belongs to `records[i]`.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub records: Vec<QuestionRecord>,
    pub audio: Vec<Waveform>,
    pub features: BTreeMap<u64, Vec<f32>>,
    pub noise: NoiseBank,
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.total() == 0 {
        return Err(DatasetError::Spec("at least one question is required".into()));
    }
    if spec.image_dim < TEMPLATES.len() * BLOCK {
        return Err(DatasetError::Spec(format!(
            "image_dim must be at least {}",
            TEMPLATES.len() * BLOCK
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // (template, answer, object) per slot, balanced over templates and answers
    let mut slots = Vec::with_capacity(spec.total());
    for (split, n) in [
        (Split::Train, spec.train),
        (Split::Val, spec.val),
        (Split::TestDev, spec.test_dev),
    ] {
        let mut part: Vec<(Split, usize, usize, usize)> = (0..n)
            .map(|i| {
                let t = i % TEMPLATES.len();
                let a = (i / TEMPLATES.len()) % BLOCK;
                (split, t, a, rng.gen_range(0..OBJECTS.len()))
            })
            .collect();
        part.shuffle(&mut rng);
        slots.extend(part);
    }

    let mut records = Vec::with_capacity(slots.len());
    let mut audio = Vec::with_capacity(slots.len());
    let mut features = BTreeMap::new();
    for (i, &(split, t, a, obj)) in slots.iter().enumerate() {
        let template = &TEMPLATES[t];
        let answer = template.answers[a];
        let mut text = template.question.replace("{obj}", OBJECTS[obj]);
        if spec.answer_source == AnswerSource::Text {
            text = format!("{text} {answer}");
        }
        let question_id = i as u64 + 1;
        let image_id = 500_000 + question_id;

        let mut feat: Vec<f32> = (0..spec.image_dim).map(|_| rng.gen_range(-0.5f32..=0.5)).collect();
        if spec.answer_source == AnswerSource::Image {
            for block in 0..TEMPLATES.len() {
                let slot = if block == t { a } else { rng.gen_range(0..BLOCK) };
                feat[block * BLOCK + slot] = 1.0;
            }
        }
        features.insert(image_id, feat);
        audio.push(synth_speech(&text, WORKING_RATE, spec.seed, &spec.synth)?);
        records.push(QuestionRecord {
            question_id,
            image_id,
            question_text: text,
            audio_path: format!("audio/{question_id}.wav"),
            answers: vec![answer.to_string()],
            answer_type: template.answer_type,
            split,
        });
    }

    let noise = synth_noise_bank(spec, &mut rng)?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        records,
        audio,
        features,
        noise,
    })
}

/// Non-stationary clips: tone bursts of random pitch and length in the
/// synthetic speech band over a hiss floor, so the noise overlaps the
/// question audio the way street sounds overlap speech.
fn synth_noise_bank(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<NoiseBank> {
    let len = ((spec.noise_secs * f64::from(WORKING_RATE)).round() as usize).max(1);
    let rate = f64::from(WORKING_RATE);
    let mut entries = Vec::new();
    for category in NOISE_CATEGORIES {
        for k in 0..spec.noise_clips {
            let hiss = rng.gen_range(0.05..0.3);
            let mut samples = Vec::with_capacity(len);
            while samples.len() < len {
                let burst = ((rng.gen_range(0.05..0.3) * rate) as usize).max(1);
                let freq = rng.gen_range(spec.synth.min_hz..spec.synth.max_hz);
                let amp = rng.gen_range(0.3..0.8);
                let step = 2.0 * std::f64::consts::PI * freq / rate;
                for n in 0..burst.min(len - samples.len()) {
                    let s = amp * (step * n as f64).sin() + hiss * rng.gen_range(-1.0..1.0);
                    samples.push(s.clamp(-1.0, 1.0));
                }
            }
            entries.push(NoiseEntry {
                wave: Waveform::new(samples, WORKING_RATE)?,
                category: category.to_string(),
                file: format!("{category}/{category}_{k}.wav"),
            });
        }
    }
    Ok(NoiseBank { entries })
}

impl SyntheticDataset {
    /// Writes `manifest.jsonl`, `audio/<id>.wav`, `features.vqaf` and
    /// `noise/<category>/*.wav` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let audio_dir = dir.join("audio");
        std::fs::create_dir_all(&audio_dir).map_err(io_err(&audio_dir))?;
        for (r, w) in self.records.iter().zip(&self.audio) {
            write_wav(w, &dir.join(&r.audio_path))?;
        }
        write_manifest(&self.records, &dir.join("manifest.jsonl"))?;
        write_features(&dir.join("features.vqaf"), &self.features)?;
        for e in &self.noise.entries {
            let p = dir.join("noise").join(&e.file);
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            write_wav(&e.wave, &p)?;
        }
        Ok(())
    }
}

/// Reads the answer off the designated coordinates (or the last spoken
/// word for [`AnswerSource::Text`]). `None` when the question matches no
/// template.
pub fn oracle_decode(record: &QuestionRecord, feature: &[f32], source: AnswerSource) -> Option<String> {
    let tokens = tokenize(&record.question_text);
    if source == AnswerSource::Text {
        return tokens.last().cloned();
    }
    let t = TEMPLATES.iter().position(|t| template_matches(t, &tokens))?;
    let block = feature.get(t * BLOCK..(t + 1) * BLOCK)?;
    let slot = (0..BLOCK).max_by(|&a, &b| block[a].total_cmp(&block[b]))?;
    Some(TEMPLATES[t].answers[slot].to_string())
}

fn template_matches(t: &Template, tokens: &[String]) -> bool {
    let pattern = tokenize(t.question);
    pattern.len() == tokens.len() && pattern.iter().zip(tokens).all(|(p, tok)| p == "obj" || p == tok)
}
