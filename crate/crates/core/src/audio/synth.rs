//! Deterministic stand-in for a text-to-speech engine: one pure tone per
//! token, followed by a short silence.

use serde::{Deserialize, Serialize};

use super::{AudioError, Result, Waveform};
use crate::text::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub tone_secs: f64,
    pub gap_secs: f64,
    pub min_hz: f64,
    pub max_hz: f64,
    pub amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tone_secs: 0.2,
            gap_secs: 0.05,
            min_hz: 200.0,
            max_hz: 4000.0,
            amplitude: 0.8,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Tone frequency assigned to `token` under `seed`.
pub fn token_frequency(token: &str, seed: u64, config: &SynthConfig) -> f64 {
    let h = splitmix64(fnv1a(token.as_bytes()) ^ splitmix64(seed));
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    config.min_hz + unit * (config.max_hz - config.min_hz)
}

pub fn synth_speech(text: &str, rate: u32, seed: u64, config: &SynthConfig) -> Result<Waveform> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(AudioError::EmptyText);
    }
    let tone_len = (config.tone_secs * f64::from(rate)).round() as usize;
    let gap_len = (config.gap_secs * f64::from(rate)).round() as usize;
    let mut samples = Vec::with_capacity(tokens.len() * (tone_len + gap_len));
    for tok in &tokens {
        let freq = token_frequency(tok, seed, config);
        let step = 2.0 * std::f64::consts::PI * freq / f64::from(rate);
        samples.extend((0..tone_len).map(|n| config.amplitude * (step * n as f64).sin()));
        samples.extend(std::iter::repeat_n(0.0, gap_len));
    }
    Waveform::new(samples, rate)
}
