//! Noise corruption of spoken questions.
//!
//! A noise clip is repeated and trimmed to the question's length, both
//! signals are normalized, and the corrupted audio is the convex mix
//! `(1 - NL) * original + NL * noise`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioError, Waveform, WORKING_RATE};

/// The ten UrbanSound8K categories.
pub const NOISE_CATEGORIES: [&str; 10] = [
    "air_conditioner",
    "car_horn",
    "children_playing",
    "dog_bark",
    "drilling",
    "engine_idling",
    "gun_shot",
    "jackhammer",
    "siren",
    "street_music",
];

/// Target RMS for [`Normalization::Rms`].
pub const RMS_TARGET: f64 = 0.1;

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("noise level {0} outside the valid range [0, 1] (fraction such as 0.3, or percent such as 30%)")]
    LevelOutOfRange(f64),
    #[error("cannot parse noise level `{0}`; expected a fraction in [0, 1] such as 0.3, or a percent such as 30%")]
    BadLevel(String),
    #[error("mix: length mismatch ({0} vs {1} samples)")]
    LengthMismatch(usize, usize),
    #[error("mix: rate mismatch ({0} Hz vs {1} Hz)")]
    RateMismatch(u32, u32),
    #[error("noise bank is empty")]
    EmptyBank,
    #[error("question {question_id}: {source}")]
    Question {
        question_id: u64,
        #[source]
        source: AudioError,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CorruptionError>;

/// Mixing weight of the noise, a fraction in [0, 1].
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub const SWEEP: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(CorruptionError::LevelOutOfRange(value));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn sweep() -> Vec<NoiseLevel> {
        Self::SWEEP.iter().map(|&v| NoiseLevel(v)).collect()
    }

    /// Percent label used in file names: `30` for 0.3, `12.5` for 0.125.
    pub fn percent_label(self) -> String {
        let pct = self.0 * 100.0;
        if (pct - pct.round()).abs() < 1e-9 {
            format!("{}", pct.round() as i64)
        } else {
            let s = format!("{pct:.2}");
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        }
    }
}

impl TryFrom<f64> for NoiseLevel {
    type Error = CorruptionError;
    fn try_from(v: f64) -> Result<Self> {
        NoiseLevel::new(v)
    }
}

impl From<NoiseLevel> for f64 {
    fn from(l: NoiseLevel) -> f64 {
        l.0
    }
}

impl fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}%", self.percent_label())
    }
}

/// Accepts `0.3` or `30%`.
impl FromStr for NoiseLevel {
    type Err = CorruptionError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let value = if let Some(pct) = s.strip_suffix('%') {
            pct.trim().parse::<f64>().map(|p| p / 100.0)
        } else {
            s.parse::<f64>()
        }
        .map_err(|_| CorruptionError::BadLevel(s.to_string()))?;
        if !value.is_finite() {
            return Err(CorruptionError::BadLevel(s.to_string()));
        }
        NoiseLevel::new(value)
    }
}

/// Parses a comma-separated level list.
pub fn parse_levels(s: &str) -> Result<Vec<NoiseLevel>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Peak,
    Rms,
}

impl FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "peak" => Ok(Self::Peak),
            "rms" => Ok(Self::Rms),
            other => Err(format!("unknown normalization `{other}` (peak|rms)")),
        }
    }
}

/// Repeats whole copies of `noise` until it covers `target_len`, then trims.
pub fn fit_noise_length(noise: &Waveform, target_len: usize) -> Result<Waveform> {
    if target_len == 0 {
        return Err(AudioError::InvalidWaveform("target length must be at least 1".into()).into());
    }
    let src = noise.samples();
    let samples: Vec<f64> = src.iter().copied().cycle().take(target_len).collect();
    Ok(Waveform::new(samples, noise.rate())?)
}

/// Normalized waveform plus a flag set when the input was silent (returned
/// unchanged).
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub wave: Waveform,
    pub silent: bool,
}

/// Scales so that the largest magnitude is exactly 1.
pub fn peak_normalize(wave: &Waveform) -> Normalized {
    let peak = wave.peak();
    if peak == 0.0 {
        return Normalized {
            wave: wave.clone(),
            silent: true,
        };
    }
    let samples = wave
        .samples()
        .iter()
        .map(|s| {
            if s.abs() == peak {
                s.signum()
            } else {
                (s / peak).clamp(-1.0, 1.0)
            }
        })
        .collect();
    Normalized {
        wave: Waveform::new(samples, wave.rate()).expect("normalized samples stay in range"),
        silent: false,
    }
}

/// Scales to [`RMS_TARGET`] root-mean-square, clamping any overshoot.
pub fn rms_normalize(wave: &Waveform) -> Normalized {
    let rms = (wave.samples().iter().map(|s| s * s).sum::<f64>() / wave.len() as f64).sqrt();
    if rms == 0.0 {
        return Normalized {
            wave: wave.clone(),
            silent: true,
        };
    }
    let g = RMS_TARGET / rms;
    let samples = wave.samples().iter().map(|s| (s * g).clamp(-1.0, 1.0)).collect();
    Normalized {
        wave: Waveform::new(samples, wave.rate()).expect("clamped"),
        silent: false,
    }
}

pub fn normalize(wave: &Waveform, mode: Normalization) -> Normalized {
    match mode {
        Normalization::Peak => peak_normalize(wave),
        Normalization::Rms => rms_normalize(wave),
    }
}

/// `(1 - nl) * original + nl * noise`, pointwise.
pub fn mix(original: &Waveform, noise: &Waveform, nl: NoiseLevel) -> Result<Waveform> {
    if original.len() != noise.len() {
        return Err(CorruptionError::LengthMismatch(original.len(), noise.len()));
    }
    if original.rate() != noise.rate() {
        return Err(CorruptionError::RateMismatch(original.rate(), noise.rate()));
    }
    let w = nl.value();
    let samples = original
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(o, n)| ((1.0 - w) * o + w * n).clamp(-1.0, 1.0))
        .collect();
    Ok(Waveform::new(samples, original.rate())?)
}

#[derive(Clone, Debug)]
pub struct NoiseEntry {
    pub wave: Waveform,
    pub category: String,
    /// Path relative to the bank root, as recorded in plans.
    pub file: String,
}

#[derive(Clone, Debug, Default)]
pub struct NoiseBank {
    pub entries: Vec<NoiseEntry>,
}

impl NoiseBank {
    /// Loads every `.wav` under `root` in sorted path order, resampled to
    /// the working rate. The category is the containing directory's name.
    pub fn load(root: &Path) -> Result<Self> {
        let mut files = Vec::new();
        collect_wavs(root, &mut files)?;
        files.sort();
        let mut entries = Vec::with_capacity(files.len());
        for path in files {
            let wave = audio::resample(&audio::read_wav(&path)?, WORKING_RATE)?;
            let rel = path.strip_prefix(root).unwrap_or(&path);
            let category = rel
                .parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "unknown".to_string());
            entries.push(NoiseEntry {
                wave,
                category,
                file: rel.to_string_lossy().replace('\\', "/"),
            });
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let io = |source| CorruptionError::Io {
        path: dir.display().to_string(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

/// One line of the persisted plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub question_id: u64,
    pub noise_file: String,
    pub category: String,
    pub levels: Vec<f64>,
}

/// Noise assignment per question, drawn up front from the seed. A question
/// keeps the same clip at every level.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionPlan {
    pub seed: u64,
    pub assignments: Vec<(u64, usize)>,
}

impl CorruptionPlan {
    pub fn draw(question_ids: &[u64], bank_size: usize, seed: u64) -> Result<Self> {
        if bank_size == 0 {
            return Err(CorruptionError::EmptyBank);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assignments = question_ids.iter().map(|&q| (q, rng.gen_range(0..bank_size))).collect();
        Ok(Self { seed, assignments })
    }

    pub fn records(&self, bank: &NoiseBank, levels: &[NoiseLevel]) -> Vec<PlanRecord> {
        self.assignments
            .iter()
            .map(|&(question_id, idx)| PlanRecord {
                question_id,
                noise_file: bank.entries[idx].file.clone(),
                category: bank.entries[idx].category.clone(),
                levels: levels.iter().map(|l| l.value()).collect(),
            })
            .collect()
    }
}

/// Normalizes `speech` and a fitted copy of `noise`, then mixes them at
/// each level. The flag reports whether either input was silent.
pub fn corrupt_levels(
    speech: &Waveform,
    noise: &Waveform,
    levels: &[NoiseLevel],
    normalization: Normalization,
) -> Result<(Vec<Waveform>, bool)> {
    let speech = normalize(speech, normalization);
    let noise = normalize(&fit_noise_length(noise, speech.wave.len())?, normalization);
    let mixed = levels
        .iter()
        .map(|&level| mix(&speech.wave, &noise.wave, level))
        .collect::<Result<Vec<_>>>()?;
    Ok((mixed, speech.silent || noise.silent))
}

/// Question to corrupt.
#[derive(Clone, Debug)]
pub struct CorpusItem {
    pub question_id: u64,
    pub audio_path: PathBuf,
}

#[derive(Clone, Copy, Debug)]
pub struct CorruptOptions {
    pub normalization: Normalization,
}

impl Default for CorruptOptions {
    fn default() -> Self {
        Self {
            normalization: Normalization::Peak,
        }
    }
}

/// Output path for a question at a level: `<question_id>_<pct>.wav`.
pub fn corrupted_path(out_dir: &Path, question_id: u64, level: NoiseLevel) -> PathBuf {
    out_dir.join(format!("{question_id}_{}.wav", level.percent_label()))
}

pub const PLAN_FILE: &str = "plan.jsonl";

#[derive(Clone, Debug)]
pub struct CorruptionSummary {
    pub plan: Vec<PlanRecord>,
    pub files_written: usize,
    /// Questions whose speech or noise was silent and left unnormalized.
    pub silent_inputs: usize,
}

/// Corrupts every item at every level, writing WAVs and `plan.jsonl` into
/// `out_dir`. Work is parallel over questions; outputs do not depend on
/// scheduling because the plan is drawn first.
pub fn corrupt_corpus(
    items: &[CorpusItem],
    bank: &NoiseBank,
    levels: &[NoiseLevel],
    seed: u64,
    out_dir: &Path,
    options: CorruptOptions,
) -> Result<CorruptionSummary> {
    if bank.is_empty() {
        return Err(CorruptionError::EmptyBank);
    }
    std::fs::create_dir_all(out_dir).map_err(|source| CorruptionError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let ids: Vec<u64> = items.iter().map(|i| i.question_id).collect();
    let plan = CorruptionPlan::draw(&ids, bank.len(), seed)?;

    let silent = items
        .par_iter()
        .zip(plan.assignments.par_iter())
        .map(|(item, &(_, noise_idx))| -> Result<usize> {
            let qerr = |source| CorruptionError::Question {
                question_id: item.question_id,
                source,
            };
            let speech = audio::read_wav(&item.audio_path)
                .and_then(|w| audio::resample(&w, WORKING_RATE))
                .map_err(qerr)?;
            let (mixed, silent) =
                corrupt_levels(&speech, &bank.entries[noise_idx].wave, levels, options.normalization)?;
            for (wave, &level) in mixed.iter().zip(levels) {
                audio::write_wav(wave, &corrupted_path(out_dir, item.question_id, level)).map_err(qerr)?;
            }
            Ok(usize::from(silent))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    if silent > 0 {
        log::warn!("{silent} question(s) had silent speech or noise; left unnormalized");
    }

    let records = plan.records(bank, levels);
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r).expect("plan record serializes"));
        body.push('\n');
    }
    let plan_path = out_dir.join(PLAN_FILE);
    std::fs::write(&plan_path, body).map_err(|source| CorruptionError::Io {
        path: plan_path.display().to_string(),
        source,
    })?;
    Ok(CorruptionSummary {
        files_written: items.len() * levels.len(),
        plan: records,
        silent_inputs: silent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &[f64]) -> Waveform {
        Waveform::new(s.to_vec(), 16000).unwrap()
    }

    fn nl(v: f64) -> NoiseLevel {
        NoiseLevel::new(v).unwrap()
    }

    #[test]
    fn fit_cases() {
        let n = w(&[0.1, 0.2, 0.3]);
        assert_eq!(fit_noise_length(&n, 3).unwrap(), n);
        assert_eq!(
            fit_noise_length(&n, 7).unwrap().samples(),
            &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3, 0.1]
        );
        assert_eq!(fit_noise_length(&n, 2).unwrap().samples(), &[0.1, 0.2]);
        assert!(fit_noise_length(&n, 0).is_err());
    }

    #[test]
    fn peak_cases() {
        let r = peak_normalize(&w(&[0.5, -0.25]));
        assert_eq!(r.wave.samples(), &[1.0, -0.5]);
        assert!(!r.silent);
        let p = w(&[1.0, -0.3]);
        assert_eq!(peak_normalize(&p).wave, p);
        let z = peak_normalize(&w(&[0.0, 0.0]));
        assert!(z.silent);
        assert_eq!(z.wave.samples(), &[0.0, 0.0]);
        // the peak lands on exactly ±1 even when division would round
        let odd = peak_normalize(&w(&[0.3, -0.7, 0.1]));
        assert_eq!(odd.wave.peak(), 1.0);
    }

    #[test]
    fn rms_normalization() {
        let r = rms_normalize(&w(&[0.5, -0.5, 0.5, -0.5]));
        for s in r.wave.samples() {
            assert!((s.abs() - RMS_TARGET).abs() < 1e-12);
        }
    }

    #[test]
    fn mix_cases() {
        let o = w(&[0.2, -0.7, 1.0]);
        let n = w(&[-0.9, 0.4, 0.0]);
        assert_eq!(mix(&o, &n, nl(0.0)).unwrap(), o);
        assert_eq!(mix(&o, &n, nl(1.0)).unwrap(), n);
        assert_eq!(
            mix(&w(&[1.0, 1.0]), &w(&[-1.0, 1.0]), nl(0.5)).unwrap().samples(),
            &[0.0, 1.0]
        );
        assert!(matches!(
            mix(&o, &w(&[0.0]), nl(0.5)),
            Err(CorruptionError::LengthMismatch(3, 1))
        ));
        let other_rate = Waveform::new(vec![0.0; 3], 8000).unwrap();
        assert!(matches!(
            mix(&o, &other_rate, nl(0.5)),
            Err(CorruptionError::RateMismatch(..))
        ));
    }

    #[test]
    fn level_parsing() {
        assert_eq!("0.3".parse::<NoiseLevel>().unwrap().value(), 0.3);
        assert_eq!("30%".parse::<NoiseLevel>().unwrap().value(), 0.3);
        assert!(matches!(
            "1.5".parse::<NoiseLevel>(),
            Err(CorruptionError::LevelOutOfRange(_))
        ));
        assert!(matches!("abc".parse::<NoiseLevel>(), Err(CorruptionError::BadLevel(_))));
        assert!("-0.1".parse::<NoiseLevel>().is_err());
        let levels = parse_levels("0, 10%,0.25").unwrap();
        let labels: Vec<_> = levels.iter().map(|l| l.percent_label()).collect();
        assert_eq!(labels, vec!["0", "10", "25"]);
        assert_eq!(nl(0.125).percent_label(), "12.5");
        assert_eq!(NoiseLevel::sweep().len(), 6);
    }

    #[test]
    fn plan_is_seeded() {
        let ids = [5, 9, 11, 40];
        let a = CorruptionPlan::draw(&ids, 10, 3).unwrap();
        assert_eq!(a, CorruptionPlan::draw(&ids, 10, 3).unwrap());
        assert!(matches!(
            CorruptionPlan::draw(&ids, 0, 3),
            Err(CorruptionError::EmptyBank)
        ));
    }

    proptest! {
        #[test]
        fn convexity(pairs in prop::collection::vec((-1.0f64..=1.0, -1.0f64..=1.0), 1..50), level in 0.0f64..=1.0) {
            let (o, n): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = mix(&w(&o), &w(&n), nl(level)).unwrap();
            for ((mi, oi), ni) in m.samples().iter().zip(&o).zip(&n) {
                prop_assert!(*mi >= oi.min(*ni) - 1e-15 && *mi <= oi.max(*ni) + 1e-15);
            }
        }

        #[test]
        fn fit_is_periodic(noise in prop::collection::vec(-1.0f64..=1.0, 1..20), target in 1usize..200) {
            let f = fit_noise_length(&w(&noise), target).unwrap();
            prop_assert_eq!(f.len(), target);
            let p = noise.len();
            for i in 0..(target / p) * p {
                prop_assert_eq!(f.samples()[i], noise[i % p]);
            }
        }
    }
}
