//! RIFF/WAVE, 16-bit PCM mono only.

use std::path::Path;

use super::{AudioError, Result, Waveform};

const PCM: u16 = 1;

/// Header fields of a parsed file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WavInfo {
    pub rate: u32,
    pub channels: u16,
    pub bits_per_sample: u16,
    pub frames: usize,
}

fn le16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Round half away from zero, clamp to the i16 range.
pub(crate) fn quantize(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn decode_wav(bytes: &[u8]) -> Result<(Waveform, WavInfo)> {
    let bad = |m: &str| AudioError::MalformedHeader(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le32(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or_else(|| bad("chunk size overflow"))?;
        if body_end > bytes.len() {
            return Err(bad("chunk extends past end of file"));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                fmt = Some((
                    le16(&body[0..2]),
                    le16(&body[2..4]),
                    le32(&body[4..8]),
                    le16(&body[14..16]),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| bad("no fmt chunk"))?;
    let data = data.ok_or_else(|| bad("no data chunk"))?;
    if format != PCM {
        return Err(AudioError::UnsupportedEncoding(format));
    }
    if channels != 1 {
        return Err(AudioError::UnsupportedChannels(channels));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedBitDepth(bits));
    }
    if rate == 0 {
        return Err(bad("sample rate is zero"));
    }
    if data.len() % 2 != 0 {
        return Err(bad("data chunk has a partial sample"));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
        .collect();
    let info = WavInfo {
        rate,
        channels,
        bits_per_sample: bits,
        frames: samples.len(),
    };
    Ok((Waveform::new(samples, rate)?, info))
}

pub fn encode_wav(wave: &Waveform) -> Vec<u8> {
    let n = wave.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.rate().to_le_bytes());
    out.extend_from_slice(&(wave.rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in wave.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_wav(&bytes).map(|(w, _)| w)
}

pub fn write_wav(wave: &Waveform, path: &Path) -> Result<()> {
    std::fs::write(path, encode_wav(wave)).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stored(bytes: &[u8]) -> Vec<i16> {
        bytes[44..]
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]))
            .collect()
    }

    #[test]
    fn quantization_rule() {
        let w = Waveform::new(vec![1.0, 0.0, -0.5, -1.0], 16000).unwrap();
        assert_eq!(stored(&encode_wav(&w)), vec![32767, 0, -16384, -32768]);
    }

    #[test]
    fn one_second_file() {
        let w = Waveform::new(vec![0.25; 16000], 16000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&w, &p).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.len(), 16000);
        assert_eq!(back.rate(), 16000);
    }

    fn with_fmt(format: u16, channels: u16, bits: u16) -> Vec<u8> {
        let w = Waveform::new(vec![0.0; 4], 16000).unwrap();
        let mut b = encode_wav(&w);
        b[20..22].copy_from_slice(&format.to_le_bytes());
        b[22..24].copy_from_slice(&channels.to_le_bytes());
        b[34..36].copy_from_slice(&bits.to_le_bytes());
        b
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(
            decode_wav(&with_fmt(1, 2, 16)),
            Err(AudioError::UnsupportedChannels(2))
        ));
        assert!(matches!(
            decode_wav(&with_fmt(3, 1, 16)),
            Err(AudioError::UnsupportedEncoding(3))
        ));
        assert!(matches!(
            decode_wav(&with_fmt(1, 1, 24)),
            Err(AudioError::UnsupportedBitDepth(24))
        ));
        assert!(matches!(
            decode_wav(b"RIFX0000WAVE"),
            Err(AudioError::MalformedHeader(_))
        ));
        let mut truncated = with_fmt(1, 1, 16);
        truncated.truncate(46);
        assert!(matches!(decode_wav(&truncated), Err(AudioError::MalformedHeader(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let w = Waveform::new(vec![0.5, -0.5], 8000).unwrap();
        let plain = encode_wav(&w);
        let mut b = plain[..36].to_vec();
        b.extend_from_slice(b"LIST");
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&[1, 2, 3, 0]);
        b.extend_from_slice(&plain[36..]);
        let (back, info) = decode_wav(&b).unwrap();
        assert_eq!(info.rate, 8000);
        assert_eq!(back.samples(), &[0.5, -0.5]);
    }

    proptest! {
        #[test]
        fn round_trip_within_one_lsb(samples in prop::collection::vec(-1.0f64..=1.0, 1..200), rate in 1u32..96000) {
            let w = Waveform::new(samples, rate).unwrap();
            let (back, info) = decode_wav(&encode_wav(&w)).unwrap();
            prop_assert_eq!(info.rate, rate);
            prop_assert_eq!(info.channels, 1);
            prop_assert_eq!(info.bits_per_sample, 16);
            prop_assert_eq!(back.len(), w.len());
            for (a, b) in back.samples().iter().zip(w.samples()) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
