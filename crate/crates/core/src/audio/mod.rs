//! Waveforms, WAV I/O, resampling, amplitude scaling and batch padding.

mod synth;
mod wav;

pub use synth::{synth_speech, token_frequency, SynthConfig};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav, WavInfo};

use thiserror::Error;

/// Working sample rate for every model input.
pub const WORKING_RATE: u32 = 16_000;

/// Scale factor from unit amplitude to model input range.
pub const SCALE: f64 = 256.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV encoding (format tag {0}); only PCM is accepted")]
    UnsupportedEncoding(u16),
    #[error("unsupported channel count {0}; only mono is accepted")]
    UnsupportedChannels(u16),
    #[error("unsupported bit depth {0}; only 16-bit is accepted")]
    UnsupportedBitDepth(u16),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("text has no tokens to synthesize")]
    EmptyText,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Unit-amplitude audio, every sample in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(AudioError::InvalidWaveform("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(AudioError::InvalidWaveform("waveform has no samples".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(AudioError::InvalidWaveform(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(Self { samples, rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Model-ready audio in [-256, 256].
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledWaveform {
    samples: Vec<f64>,
    rate: u32,
}

impl ScaledWaveform {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Builds a scaled waveform directly; samples are clamped to ±256.
    pub fn from_samples(samples: Vec<f64>, rate: u32) -> Self {
        let samples = samples.into_iter().map(|s| s.clamp(-SCALE, SCALE)).collect();
        Self { samples, rate }
    }
}

/// Fixed ×256 map; no re-centering.
pub fn scale_amplitude(wave: &Waveform) -> ScaledWaveform {
    ScaledWaveform {
        samples: wave.samples.iter().map(|s| (s * SCALE).clamp(-SCALE, SCALE)).collect(),
        rate: wave.rate,
    }
}

/// Zero-padded batch matrix `[B, Lmax]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub data: Vec<f64>,
    pub rows: usize,
    pub width: usize,
    pub lengths: Vec<usize>,
    pub rate: u32,
}

impl PaddedBatch {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

pub fn pad_batch(waves: &[ScaledWaveform]) -> Result<PaddedBatch> {
    let first = waves.first().ok_or(AudioError::EmptyBatch)?;
    if let Some(w) = waves.iter().find(|w| w.rate != first.rate) {
        return Err(AudioError::RateMismatch(first.rate, w.rate));
    }
    let width = waves.iter().map(|w| w.len()).max().unwrap_or(0);
    let mut data = vec![0.0; waves.len() * width];
    for (i, w) in waves.iter().enumerate() {
        data[i * width..i * width + w.len()].copy_from_slice(&w.samples);
    }
    Ok(PaddedBatch {
        data,
        rows: waves.len(),
        width,
        lengths: waves.iter().map(|w| w.len()).collect(),
        rate: first.rate,
    })
}

/// Linear-interpolation resampling. Output sample `i` reads the input at
/// position `i * rate / target_rate`; positions past the last sample hold
/// the last sample. Output length is `round(len * target / rate)`.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(AudioError::InvalidWaveform("target rate must be positive".into()));
    }
    if target_rate == wave.rate {
        return Ok(wave.clone());
    }
    let src = &wave.samples;
    let ratio = f64::from(wave.rate) / f64::from(target_rate);
    let out_len = ((src.len() as f64) * f64::from(target_rate) / f64::from(wave.rate))
        .round()
        .max(1.0) as usize;
    let last = src.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let idx = pos.floor() as usize;
            if idx >= last {
                return src[last];
            }
            let frac = pos - idx as f64;
            src[idx] + frac * (src[idx + 1] - src[idx])
        })
        .collect();
    Waveform::new(samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn waveform_invariants() {
        assert!(Waveform::new(vec![], 16000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![1.5], 16000).is_err());
        assert!(Waveform::new(vec![-1.0, 1.0], 16000).is_ok());
    }

    #[test]
    fn scale_cases() {
        let w = Waveform::new(vec![-1.0, 1.0], 16000).unwrap();
        assert_eq!(scale_amplitude(&w).samples(), &[-256.0, 256.0]);
        let w = Waveform::new(vec![0.5, -0.25], 16000).unwrap();
        assert_eq!(scale_amplitude(&w).samples(), &[128.0, -64.0]);
        let w = Waveform::new(vec![0.0; 5], 16000).unwrap();
        assert!(scale_amplitude(&w).samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn pad_cases() {
        let a = ScaledWaveform::from_samples(vec![1.0, 2.0, 3.0], 16000);
        let b = ScaledWaveform::from_samples(vec![4.0, 5.0, 6.0, 7.0, 8.0], 16000);
        let batch = pad_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!((batch.rows, batch.width), (2, 5));
        assert_eq!(batch.row(0), &[1.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(batch.row(1), b.samples());
        assert_eq!(batch.lengths, vec![3, 5]);

        let same = pad_batch(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same.width, 3);
        let single = pad_batch(std::slice::from_ref(&b)).unwrap();
        assert_eq!(single.row(0), b.samples());

        assert!(matches!(pad_batch(&[]), Err(AudioError::EmptyBatch)));
        let c = ScaledWaveform::from_samples(vec![1.0], 8000);
        assert!(matches!(pad_batch(&[a, c]), Err(AudioError::RateMismatch(..))));
    }

    #[test]
    fn resample_cases() {
        let w = Waveform::new(vec![0.1, -0.3, 0.7], 16000).unwrap();
        assert_eq!(resample(&w, 16000).unwrap(), w);

        let ramp = Waveform::new(vec![0.0, 1.0], 8000).unwrap();
        let up = resample(&ramp, 16000).unwrap();
        assert_eq!(up.len(), 4);
        assert_eq!(&up.samples()[..3], &[0.0, 0.5, 1.0]);
        assert_eq!(up.rate(), 16000);

        let c = Waveform::new(vec![0.37; 101], 22050).unwrap();
        let r = resample(&c, 16000).unwrap();
        assert_eq!(r.len(), (101.0f64 * 16000.0 / 22050.0).round() as usize);
        assert!(r.samples().iter().all(|&s| s == 0.37));
    }

    #[test]
    fn resample_round_trip_on_tones() {
        let rate = 16000u32;
        for freq in [100.0, 1000.0, 3900.0] {
            let samples: Vec<f64> = (0..4000)
                .map(|n| 0.9 * (2.0 * std::f64::consts::PI * freq * n as f64 / f64::from(rate)).sin())
                .collect();
            let w = Waveform::new(samples, rate).unwrap();
            let back = resample(&resample(&w, 2 * rate).unwrap(), rate).unwrap();
            assert_eq!(back.len(), w.len());
            let mse: f64 = back
                .samples()
                .iter()
                .zip(w.samples())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / w.len() as f64;
            assert!(mse.sqrt() < 1e-6, "rms {}", mse.sqrt());
        }
    }

    proptest! {
        #[test]
        fn scale_is_linear(samples in prop::collection::vec(-1.0f64..=1.0, 1..64), alpha in -1.0f64..=1.0) {
            let w = Waveform::new(samples.clone(), 16000).unwrap();
            let aw = Waveform::new(samples.iter().map(|s| alpha * s).collect(), 16000).unwrap();
            let lhs = scale_amplitude(&aw);
            let rhs = scale_amplitude(&w);
            for (a, b) in lhs.samples().iter().zip(rhs.samples()) {
                prop_assert!((a - alpha * b).abs() < 1e-12);
            }
        }

        #[test]
        fn pad_preserves_samples(lens in prop::collection::vec(1usize..40, 1..6)) {
            let waves: Vec<_> = lens
                .iter()
                .enumerate()
                .map(|(i, &n)| ScaledWaveform::from_samples((0..n).map(|j| (i * 100 + j) as f64 - 50.0).collect(), 16000))
                .collect();
            let batch = pad_batch(&waves).unwrap();
            for (i, w) in waves.iter().enumerate() {
                prop_assert_eq!(&batch.row(i)[..w.len()], w.samples());
                prop_assert!(batch.row(i)[w.len()..].iter().all(|&z| z == 0.0));
            }
        }

        #[test]
        fn resample_exact_on_ramps(n in 2usize..50) {
            // a ramp sampled at r, upsampled ×2, is the ramp sampled at 2r
            let w = Waveform::new((0..n).map(|i| i as f64 / n as f64).collect(), 8000).unwrap();
            let up = resample(&w, 16000).unwrap();
            for (i, &s) in up.samples().iter().enumerate() {
                let expected = ((i as f64 / 2.0) / n as f64).min((n - 1) as f64 / n as f64);
                prop_assert!((s - expected).abs() < 1e-12);
            }
        }
    }
}
