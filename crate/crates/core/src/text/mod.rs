//! Tokenization, the question vocabulary, encoding, and WER scoring.

mod transcripts;
mod wer;

pub use transcripts::{read_transcripts, FileTranscriber, Transcriber, TranscriptRecord};
pub use wer::{align, wer, wer_corpus, EditOp, WerBreakdown};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of token slots per encoded question.
pub const DEFAULT_MAX_QUESTION_LEN: usize = 22;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("reference has no tokens")]
    EmptyReference,
    #[error("no sentence pairs to score")]
    NoPairs,
    #[error("max_len must be at least 1")]
    ZeroLength,
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TextError>;

/// Lowercases, strips punctuation (apostrophes survive inside words) and
/// splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let kept: String = raw
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '\'')
                .flat_map(char::to_lowercase)
                .collect();
            let word = kept.trim_matches('\'');
            (!word.is_empty()).then(|| word.to_string())
        })
        .collect()
}

/// Canonical form used to compare question texts.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Token → index map. Indices run 1..=V; 0 is padding and unknown.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        for text in corpus {
            for tok in tokenize(text.as_ref()) {
                if !vocab.index.contains_key(&tok) {
                    vocab.tokens.push(tok.clone());
                    vocab.index.insert(tok, vocab.tokens.len());
                }
            }
        }
        if vocab.tokens.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        Ok(vocab)
    }

    /// Rebuilds from an ordered token list (index i+1 for position i).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i + 1)).collect();
        Self { tokens, index }
    }

    /// Index of `token`, 0 when unknown.
    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    /// Number of real tokens V; the embedding table needs V + 1 rows.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

pub fn build_vocab<S: AsRef<str>>(corpus: &[S]) -> Result<Vocabulary> {
    Vocabulary::build(corpus)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedQuestion {
    pub indices: Vec<usize>,
    /// Token count before truncation.
    pub original_len: usize,
}

impl EncodedQuestion {
    /// True when every slot is zero: nothing for a text model to read.
    pub fn unanswerable_by_text(&self) -> bool {
        self.indices.iter().all(|&i| i == 0)
    }
}

pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<EncodedQuestion> {
    if max_len == 0 {
        return Err(TextError::ZeroLength);
    }
    let tokens = tokenize(text);
    let mut indices: Vec<usize> = tokens.iter().take(max_len).map(|t| vocab.index_of(t)).collect();
    indices.resize(max_len, 0);
    Ok(EncodedQuestion {
        indices,
        original_len: tokens.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_cases() {
        assert_eq!(tokenize("What food is this?"), vec!["what", "food", "is", "this"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("isn't  it"), vec!["isn't", "it"]);
        assert_eq!(tokenize("'quoted' words, here."), vec!["quoted", "words", "here"]);
        assert_eq!(tokenize("A  B\tc\n"), vec!["a", "b", "c"]);
    }

    #[test]
    fn vocab_first_appearance() {
        let v = build_vocab(&["a b", "b c"]).unwrap();
        assert_eq!((v.index_of("a"), v.index_of("b"), v.index_of("c")), (1, 2, 3));
        assert_eq!(v.index_of("zebra"), 0);
        assert_eq!(v.token(2), Some("b"));
        assert_eq!(v.token(0), None);
        assert_eq!(build_vocab(&["solo"]).unwrap().len(), 1);
        assert!(matches!(build_vocab::<&str>(&[]), Err(TextError::EmptyCorpus)));
        assert!(matches!(build_vocab(&["?!"]), Err(TextError::EmptyCorpus)));
    }

    #[test]
    fn encode_cases() {
        let v = build_vocab(&["what color is the ball", "how many cats are there now"]).unwrap();
        let e = encode("what color is", &v, 5).unwrap();
        assert_eq!(e.indices, vec![1, 2, 3, 0, 0]);
        assert_eq!(e.original_len, 3);

        let oov = encode("zebra giraffe", &v, 4).unwrap();
        assert_eq!(oov.indices, vec![0; 4]);
        assert!(oov.unanswerable_by_text());

        let long = encode("how many cats are there now please", &v, 5).unwrap();
        assert_eq!(long.indices, vec![6, 7, 8, 9, 10]);
        assert_eq!(long.original_len, 7);

        assert!(matches!(encode("a", &v, 0), Err(TextError::ZeroLength)));
    }

    #[test]
    fn vocab_serde_round_trip() {
        let v = build_vocab(&["x y z"]).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["x","y","z"]"#);
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back.index_of("y"), 2);
    }

    proptest! {
        #[test]
        fn vocab_never_uses_zero(corpus in prop::collection::vec("[a-d ]{1,12}", 1..8)) {
            if let Ok(v) = build_vocab(&corpus) {
                for (i, t) in v.tokens().iter().enumerate() {
                    prop_assert_eq!(v.index_of(t), i + 1);
                }
            }
        }

        #[test]
        fn encode_total_and_deterministic(text in ".{0,60}", max_len in 1usize..10) {
            let v = build_vocab(&["the a of is"]).unwrap();
            let a = encode(&text, &v, max_len).unwrap();
            let b = encode(&text, &v, max_len).unwrap();
            prop_assert_eq!(a.indices.len(), max_len);
            prop_assert_eq!(a, b);
        }
    }
}
