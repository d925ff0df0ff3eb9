//! Externally produced transcripts, the input to the pipelined text model.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, TextError};

/// One line of a transcript file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub question_id: u64,
    #[serde(default)]
    pub noise_level: f64,
    pub text: String,
}

/// Source of recognized text for a question at a noise level.
pub trait Transcriber: Send + Sync {
    fn transcribe(&self, question_id: u64, noise_level: f64) -> Option<String>;
}

fn level_key(level: f64) -> i64 {
    (level * 10_000.0).round() as i64
}

/// Transcripts loaded from a JSON-lines file.
#[derive(Clone, Debug, Default)]
pub struct FileTranscriber {
    entries: HashMap<(u64, i64), String>,
}

impl FileTranscriber {
    pub fn from_records(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        let entries = records
            .into_iter()
            .map(|r| ((r.question_id, level_key(r.noise_level)), r.text))
            .collect();
        Self { entries }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_records(read_transcripts(path)?))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Transcriber for FileTranscriber {
    fn transcribe(&self, question_id: u64, noise_level: f64) -> Option<String> {
        self.entries.get(&(question_id, level_key(noise_level))).cloned()
    }
}

pub fn read_transcripts(path: &Path) -> Result<Vec<TranscriptRecord>> {
    let shown = path.display().to_string();
    let body = std::fs::read_to_string(path).map_err(|source| TextError::Io {
        path: shown.clone(),
        source,
    })?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TextError::Parse {
                path: shown.clone(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_by_id_and_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        std::fs::write(
            &p,
            "{\"question_id\": 7, \"noise_level\": 0.3, \"text\": \"what is it\"}\n\n{\"question_id\": 7, \"text\": \"what is this\"}\n",
        )
        .unwrap();
        let t = FileTranscriber::load(&p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.transcribe(7, 0.3).as_deref(), Some("what is it"));
        assert_eq!(t.transcribe(7, 0.0).as_deref(), Some("what is this"));
        assert_eq!(t.transcribe(7, 0.4), None);
    }

    #[test]
    fn bad_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        std::fs::write(&p, "{\"question_id\": 1, \"text\": \"a\"}\nnot json\n").unwrap();
        match read_transcripts(&p) {
            Err(TextError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
