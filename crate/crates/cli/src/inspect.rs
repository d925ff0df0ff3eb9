use std::collections::BTreeMap;
use std::path::Path;

use sbvqa::audio::decode_wav;
use sbvqa::dataset::{parse_manifest, FeatureStore, FEATURE_MAGIC};
use sbvqa::tensor::{decode_checkpoint, CHECKPOINT_MAGIC};

use crate::error::{CliError, Result};

/// Prints a summary chosen by the file's leading bytes.
pub fn inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let head = bytes.get(..4).unwrap_or(&bytes);
    if head == CHECKPOINT_MAGIC {
        checkpoint(&bytes)
    } else if head == b"RIFF" {
        wav(&bytes)
    } else if head == FEATURE_MAGIC {
        features(path)
    } else if bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{') {
        manifest(path, &bytes)
    } else {
        Err(CliError::Invalid(format!(
            "{}: unrecognized format (expected a checkpoint, WAV, feature store or manifest)",
            path.display()
        )))
    }
}

fn checkpoint(bytes: &[u8]) -> Result<()> {
    let entries = decode_checkpoint(bytes)?;
    let width = entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
    let mut total = 0;
    emit!("checkpoint: {} tensors", entries.len());
    for e in &entries {
        total += e.data.len();
        emit!("  {:width$}  {:?}  {}", e.name, e.shape, e.data.len());
    }
    emit!("parameters: {total}");
    Ok(())
}

fn wav(bytes: &[u8]) -> Result<()> {
    let (wave, info) = decode_wav(bytes)?;
    emit!(
        "{} samples, {} Hz, {:.3} s, peak {:.4}, {}-bit, {} channel(s)",
        info.frames,
        info.rate,
        wave.duration_secs(),
        wave.peak(),
        info.bits_per_sample,
        info.channels
    );
    Ok(())
}

fn features(path: &Path) -> Result<()> {
    let store = FeatureStore::open(path)?;
    emit!("feature store: {} images, dimension {}", store.len(), store.dim());
    Ok(())
}

fn manifest(path: &Path, bytes: &[u8]) -> Result<()> {
    let text = std::str::from_utf8(bytes).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let m = parse_manifest(text, &path.display().to_string())?;
    let mut splits: BTreeMap<String, usize> = BTreeMap::new();
    let mut types: BTreeMap<String, usize> = BTreeMap::new();
    for r in &m.records {
        *splits.entry(r.split.to_string()).or_default() += 1;
        *types.entry(r.answer_type.to_string()).or_default() += 1;
    }
    emit!("manifest: {} questions", m.records.len());
    for (s, n) in &splits {
        emit!("  {s}: {n}");
    }
    let types: Vec<String> = types.iter().map(|(t, n)| format!("{t} {n}")).collect();
    emit!("answer types: {}", types.join(", "));
    if m.guessed_answer_types > 0 {
        emit!("answer types guessed for {} question(s)", m.guessed_answer_types);
    }
    Ok(())
}
