//! Question manifests, answer vocabularies, image features and the
//! synthetic desk-scale corpus.

mod features;
mod synthetic;

pub use features::{write_features, FeatureStore, FEATURE_HEADER_LEN, FEATURE_MAGIC, FEATURE_VERSION};
pub use synthetic::{
    generate_synthetic_dataset, oracle_decode, AnswerSource, SyntheticDataset, SyntheticSpec, Template, TEMPLATES,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::normalize;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: invalid JSON: {msg}")]
    Json { path: String, line: usize, msg: String },
    #[error("{path}:{line}: missing field `{field}`")]
    MissingField {
        path: String,
        line: usize,
        field: &'static str,
    },
    #[error("{path}:{line}: field `{field}` is invalid: {msg}")]
    InvalidField {
        path: String,
        line: usize,
        field: &'static str,
        msg: String,
    },
    #[error("{path}:{line}: duplicate question_id {question_id}")]
    DuplicateId {
        path: String,
        line: usize,
        question_id: u64,
    },
    #[error("{path}:{line}: unknown answer_type `{value}` (yes/no|number|other)")]
    UnknownAnswerType { path: String, line: usize, value: String },
    #[error("need {needed} distinct answers, found {found}")]
    TooFewAnswers { needed: usize, found: usize },
    #[error("image_id {0} not in feature store")]
    UnknownImage(u64),
    #[error("feature for image {image_id} has dimension {got}, store uses {expected}")]
    FeatureDim { image_id: u64, expected: usize, got: usize },
    #[error("malformed feature store: {0}")]
    MalformedStore(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerType {
    #[serde(rename = "yes/no")]
    YesNo,
    #[serde(rename = "number")]
    Number,
    #[serde(rename = "other")]
    Other,
}

impl AnswerType {
    pub const ALL: [AnswerType; 3] = [AnswerType::YesNo, AnswerType::Number, AnswerType::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::YesNo => "yes/no",
            Self::Number => "number",
            Self::Other => "other",
        }
    }

    /// Guess from the question's opening words, for manifests without the field.
    pub fn guess(question: &str) -> Self {
        let q = normalize(question);
        let first = q.split(' ').next().unwrap_or("");
        if q.starts_with("how many") {
            Self::Number
        } else if matches!(first, "is" | "are" | "does" | "do") {
            Self::YesNo
        } else {
            Self::Other
        }
    }
}

impl FromStr for AnswerType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "yes/no" => Ok(Self::YesNo),
            "number" => Ok(Self::Number),
            "other" => Ok(Self::Other),
            other => Err(other.to_string()),
        }
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val")]
    Val,
    #[serde(rename = "test-dev")]
    TestDev,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::TestDev => "test-dev",
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test-dev" | "testdev" => Ok(Self::TestDev),
            other => Err(format!("unknown split `{other}` (train|val|test-dev)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: u64,
    pub image_id: u64,
    pub question_text: String,
    pub audio_path: String,
    pub answers: Vec<String>,
    pub answer_type: AnswerType,
    pub split: Split,
}

impl QuestionRecord {
    pub fn primary_answer(&self) -> &str {
        &self.answers[0]
    }

    /// Audio path resolved against `base` when relative.
    pub fn resolve_audio(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

/// Parsed manifest plus how many records needed the answer_type fallback.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<QuestionRecord>,
    pub guessed_answer_types: usize,
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_manifest(&text, &path.display().to_string())
}

/// Parses JSON-lines manifest text; `origin` names the source in errors.
pub fn parse_manifest(text: &str, origin: &str) -> Result<Manifest> {
    let mut seen = HashSet::new();
    let mut manifest = Manifest::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (record, guessed) = parse_record(line, origin, line_no)?;
        if !seen.insert(record.question_id) {
            return Err(DatasetError::DuplicateId {
                path: origin.to_string(),
                line: line_no,
                question_id: record.question_id,
            });
        }
        manifest.guessed_answer_types += usize::from(guessed);
        manifest.records.push(record);
    }
    if manifest.guessed_answer_types > 0 {
        log::warn!(
            "{origin}: answer_type missing on {} record(s); guessed from question wording",
            manifest.guessed_answer_types
        );
    }
    Ok(manifest)
}

fn parse_record(line: &str, path: &str, line_no: usize) -> Result<(QuestionRecord, bool)> {
    let value: Value = serde_json::from_str(line).map_err(|e| DatasetError::Json {
        path: path.to_string(),
        line: line_no,
        msg: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| DatasetError::Json {
        path: path.to_string(),
        line: line_no,
        msg: "expected an object".into(),
    })?;
    let missing = |field| DatasetError::MissingField {
        path: path.to_string(),
        line: line_no,
        field,
    };
    let invalid = |field, msg: &str| DatasetError::InvalidField {
        path: path.to_string(),
        line: line_no,
        field,
        msg: msg.to_string(),
    };
    let get = |field| obj.get(field).filter(|v| !v.is_null()).ok_or_else(|| missing(field));
    let uint = |field| {
        get(field)?
            .as_u64()
            .ok_or_else(|| invalid(field, "expected a non-negative integer"))
    };
    let string = |field| {
        get(field)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| invalid(field, "expected a string"))
    };

    let question_id = uint("question_id")?;
    let image_id = uint("image_id")?;
    let question_text = string("question_text")?;
    if question_text.trim().is_empty() {
        return Err(invalid("question_text", "empty"));
    }
    let audio_path = string("audio_path")?;
    let answers: Vec<String> = get("answers")?
        .as_array()
        .ok_or_else(|| invalid("answers", "expected a list of strings"))?
        .iter()
        .map(|a| {
            a.as_str()
                .map(str::to_string)
                .ok_or_else(|| invalid("answers", "expected a list of strings"))
        })
        .collect::<Result<_>>()?;
    if answers.is_empty() {
        return Err(invalid("answers", "empty list"));
    }
    let split = string("split")?.parse().map_err(|e: String| invalid("split", &e))?;
    let (answer_type, guessed) = match obj.get("answer_type").filter(|v| !v.is_null()) {
        None => (AnswerType::guess(&question_text), true),
        Some(v) => {
            let s = v.as_str().ok_or_else(|| invalid("answer_type", "expected a string"))?;
            let t = s.parse().map_err(|value| DatasetError::UnknownAnswerType {
                path: path.to_string(),
                line: line_no,
                value,
            })?;
            (t, false)
        }
    };
    Ok((
        QuestionRecord {
            question_id,
            image_id,
            question_text,
            audio_path,
            answers,
            answer_type,
            split,
        },
        guessed,
    ))
}

pub fn write_manifest(records: &[QuestionRecord], path: &Path) -> Result<()> {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r).expect("record serializes"));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(io_err(path))
}

/// Which of a question's answers is its training label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// The first listed answer.
    #[default]
    First,
    /// The most common answer; ties go to the lexicographically smallest.
    Majority,
}

impl LabelMode {
    pub fn label(self, record: &QuestionRecord) -> &str {
        match self {
            Self::First => record.primary_answer(),
            Self::Majority => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for a in &record.answers {
                    *counts.entry(a.as_str()).or_default() += 1;
                }
                // lexicographic iteration + strict `>` keeps the first of equal counts
                let mut best = ("", 0);
                for (a, c) in counts {
                    if c > best.1 {
                        best = (a, c);
                    }
                }
                best.0
            }
        }
    }
}

impl FromStr for LabelMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "first" | "primary" => Ok(Self::First),
            "majority" => Ok(Self::Majority),
            other => Err(format!("unknown label mode `{other}` (first|majority)")),
        }
    }
}

/// The K most frequent training labels, as output classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerVocabulary {
    pub mode: LabelMode,
    /// Class index order.
    answers: Vec<String>,
    /// Label frequency of each class in the records it was built from.
    counts: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl AnswerVocabulary {
    pub fn from_answers(answers: Vec<String>, counts: Vec<usize>, mode: LabelMode) -> Self {
        let index = answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        Self {
            mode,
            answers,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }

    pub fn answer(&self, index: usize) -> Option<&str> {
        self.answers.get(index).map(String::as_str)
    }

    /// Class of the record's label, if it is in the vocabulary.
    pub fn label_of(&self, record: &QuestionRecord) -> Option<usize> {
        self.index_of(self.mode.label(record))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("vocabulary serializes");
        std::fs::write(path, body).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let v: Self = serde_json::from_str(&text).map_err(|e| DatasetError::Json {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        Ok(Self::from_answers(v.answers, v.counts, v.mode))
    }
}

/// Top-`k` labels by frequency, ties broken lexicographically; class
/// indices follow that order. Pass training records only.
pub fn build_answer_vocab(train: &[QuestionRecord], k: usize, mode: LabelMode) -> Result<AnswerVocabulary> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for r in train {
        *freq.entry(mode.label(r)).or_default() += 1;
    }
    if freq.len() < k || k == 0 {
        return Err(DatasetError::TooFewAnswers {
            needed: k.max(1),
            found: freq.len(),
        });
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(k);
    let (answers, counts) = ranked.into_iter().map(|(a, c)| (a.to_string(), c)).unzip();
    Ok(AnswerVocabulary::from_answers(answers, counts, mode))
}

/// Drops training records whose label is outside the vocabulary. Records
/// of other splits pass through untouched.
pub fn filter_train(records: &[QuestionRecord], vocab: &AnswerVocabulary) -> Vec<QuestionRecord> {
    let kept: Vec<QuestionRecord> = records
        .iter()
        .filter(|r| r.split != Split::Train || vocab.label_of(r).is_some())
        .cloned()
        .collect();
    let train_in = records.iter().filter(|r| r.split == Split::Train).count();
    let train_out = kept.iter().filter(|r| r.split == Split::Train).count();
    if train_in > 0 && train_out == 0 {
        log::warn!("no training record has a label in the answer vocabulary");
    }
    kept
}

/// Question ids per named split, including the derived `zero-shot`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub splits: BTreeMap<String, Vec<u64>>,
}

impl SplitSpec {
    pub const ZERO_SHOT: &'static str = "zero-shot";

    pub fn get(&self, name: &str) -> Option<&[u64]> {
        self.splits.get(name).map(Vec::as_slice)
    }

    pub fn zero_shot(&self) -> &[u64] {
        self.get(Self::ZERO_SHOT).unwrap_or(&[])
    }
}

/// Validation questions whose normalized text never occurs in training.
pub fn zero_shot_split(train: &[QuestionRecord], val: &[QuestionRecord]) -> SplitSpec {
    let seen: HashSet<String> = train.iter().map(|r| normalize(&r.question_text)).collect();
    let zero: Vec<u64> = val
        .iter()
        .filter(|r| !seen.contains(&normalize(&r.question_text)))
        .map(|r| r.question_id)
        .collect();
    let mut splits = BTreeMap::new();
    splits.insert("train".to_string(), train.iter().map(|r| r.question_id).collect());
    splits.insert("val".to_string(), val.iter().map(|r| r.question_id).collect());
    splits.insert(SplitSpec::ZERO_SHOT.to_string(), zero);
    SplitSpec { splits }
}

pub fn records_in_split(records: &[QuestionRecord], split: Split) -> Vec<QuestionRecord> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: u64, text: &str, answers: &[&str], split: Split) -> QuestionRecord {
        QuestionRecord {
            question_id: id,
            image_id: id,
            question_text: text.into(),
            audio_path: format!("audio/{id}.wav"),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            answer_type: AnswerType::Other,
            split,
        }
    }

    fn line(id: u64) -> String {
        format!(
            r#"{{"question_id":{id},"image_id":9,"question_text":"is it red","audio_path":"a.wav","answers":["yes"],"answer_type":"yes/no","split":"train"}}"#
        )
    }

    #[test]
    fn manifest_basics() {
        assert!(parse_manifest("", "m").unwrap().records.is_empty());
        let m = parse_manifest(&format!("{}\n{}\n", line(2), line(1)), "m").unwrap();
        let ids: Vec<_> = m.records.iter().map(|r| r.question_id).collect();
        assert_eq!(ids, vec![2, 1]);
        assert_eq!(m.records[0].answer_type, AnswerType::YesNo);
    }

    #[test]
    fn manifest_errors_name_the_line() {
        let no_answers = line(2).replace(r#""answers":["yes"],"#, "");
        let err = parse_manifest(&format!("{}\n{no_answers}\n", line(1)), "m").unwrap_err();
        assert!(
            matches!(
                err,
                DatasetError::MissingField {
                    line: 2,
                    field: "answers",
                    ..
                }
            ),
            "{err}"
        );
        assert!(err.to_string().contains("m:2"));

        let err = parse_manifest(&format!("{}\n{}\n", line(1), line(1)), "m").unwrap_err();
        assert!(matches!(
            err,
            DatasetError::DuplicateId {
                line: 2,
                question_id: 1,
                ..
            }
        ));

        let bad = line(1).replace("yes/no", "color");
        let err = parse_manifest(&bad, "m").unwrap_err();
        assert!(matches!(err, DatasetError::UnknownAnswerType { line: 1, ref value, .. } if value == "color"));

        let empty = line(1).replace(r#"["yes"]"#, "[]");
        assert!(matches!(
            parse_manifest(&empty, "m"),
            Err(DatasetError::InvalidField { field: "answers", .. })
        ));
    }

    #[test]
    fn missing_answer_type_is_guessed() {
        let l = line(1)
            .replace(r#""answer_type":"yes/no","#, "")
            .replace("is it red", "how many dogs");
        let m = parse_manifest(&l, "m").unwrap();
        assert_eq!(m.guessed_answer_types, 1);
        assert_eq!(m.records[0].answer_type, AnswerType::Number);
        assert_eq!(AnswerType::guess("Does it fly?"), AnswerType::YesNo);
        assert_eq!(AnswerType::guess("what is it"), AnswerType::Other);
    }

    #[test]
    fn vocab_frequency_order() {
        let mut rs = Vec::new();
        for (a, n) in [("yes", 5), ("no", 3), ("cat", 1)] {
            for _ in 0..n {
                rs.push(rec(rs.len() as u64, "q", &[a], Split::Train));
            }
        }
        let v = build_answer_vocab(&rs, 2, LabelMode::First).unwrap();
        assert_eq!(v.answers(), &["yes", "no"]);
        assert_eq!(v.index_of("no"), Some(1));
        assert_eq!(v.counts(), &[5, 3]);
        assert_eq!(build_answer_vocab(&rs, 3, LabelMode::First).unwrap().len(), 3);
        assert!(matches!(
            build_answer_vocab(&rs, 4, LabelMode::First),
            Err(DatasetError::TooFewAnswers { needed: 4, found: 3 })
        ));
    }

    #[test]
    fn vocab_tie_is_lexicographic() {
        let rs = vec![
            rec(1, "q", &["yes"], Split::Train),
            rec(2, "q", &["yes"], Split::Train),
            rec(3, "q", &["dog"], Split::Train),
            rec(4, "q", &["cat"], Split::Train),
        ];
        let v = build_answer_vocab(&rs, 2, LabelMode::First).unwrap();
        assert_eq!(v.answers(), &["yes", "cat"]);
    }

    #[test]
    fn majority_label() {
        let r = rec(1, "q", &["two", "three", "three", "two", "four"], Split::Train);
        assert_eq!(LabelMode::First.label(&r), "two");
        assert_eq!(LabelMode::Majority.label(&r), "three");
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let rs = vec![rec(1, "q", &["a"], Split::Train), rec(2, "q", &["b"], Split::Train)];
        let v = build_answer_vocab(&rs, 2, LabelMode::Majority).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("answers.json");
        v.save(&p).unwrap();
        let back = AnswerVocabulary::load(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.index_of("b"), Some(1));
    }

    #[test]
    fn filter_cases() {
        let rs = vec![
            rec(1, "q", &["yes"], Split::Train),
            rec(2, "q", &["zebra"], Split::Train),
            rec(3, "q", &["no"], Split::Train),
            rec(4, "q", &["zebra"], Split::Val),
        ];
        let v = AnswerVocabulary::from_answers(vec!["yes".into(), "no".into()], vec![1, 1], LabelMode::First);
        let ids: Vec<_> = filter_train(&rs, &v).iter().map(|r| r.question_id).collect();
        assert_eq!(ids, vec![1, 3, 4]);
        let none = AnswerVocabulary::from_answers(vec!["maybe".into()], vec![1], LabelMode::First);
        assert_eq!(filter_train(&rs[..3], &none), vec![]);
        assert_eq!(filter_train(&rs[..1], &v), rs[..1].to_vec());
    }

    #[test]
    fn zero_shot_examples() {
        let train = vec![
            rec(1, "What is it?", &["a"], Split::Train),
            rec(2, "is it red", &["a"], Split::Train),
        ];
        let val = vec![
            rec(3, "what is it", &["a"], Split::Val),
            rec(4, "how big", &["a"], Split::Val),
        ];
        let s = zero_shot_split(&train, &val);
        assert_eq!(s.zero_shot(), &[4]);
        let disjoint = zero_shot_split(&train[..0], &val);
        assert_eq!(disjoint.zero_shot(), &[3, 4]);
        assert_eq!(disjoint.get("val").unwrap(), disjoint.zero_shot());
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(labels in proptest::collection::vec(0u8..6, 0..30), vocab_size in 1usize..6) {
            let rs: Vec<_> = labels
                .iter()
                .enumerate()
                .map(|(i, l)| rec(i as u64, "q", &[&format!("a{l}")], if i % 3 == 0 { Split::Val } else { Split::Train }))
                .collect();
            let v = AnswerVocabulary::from_answers((0..vocab_size).map(|i| format!("a{i}")).collect(), vec![0; vocab_size], LabelMode::First);
            let once = filter_train(&rs, &v);
            prop_assert_eq!(filter_train(&once, &v), once);
        }

        #[test]
        fn zero_shot_never_contains_train_text(
            train in proptest::collection::vec(0u8..8, 0..10),
            val in proptest::collection::vec(0u8..8, 0..10),
        ) {
            let mk = |v: &[u8], split, off| v.iter().enumerate().map(|(i, t)| rec(off + i as u64, &format!("Q {t}?"), &["a"], split)).collect::<Vec<_>>();
            let (tr, va) = (mk(&train, Split::Train, 0), mk(&val, Split::Val, 100));
            let s = zero_shot_split(&tr, &va);
            let texts: HashSet<_> = tr.iter().map(|r| normalize(&r.question_text)).collect();
            for id in s.zero_shot() {
                let r = va.iter().find(|r| r.question_id == *id).unwrap();
                prop_assert!(!texts.contains(&normalize(&r.question_text)));
            }
        }
    }
}
