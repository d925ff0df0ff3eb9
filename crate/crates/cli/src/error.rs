use sbvqa::audio::AudioError;
use sbvqa::corruption::CorruptionError;
use sbvqa::dataset::DatasetError;
use sbvqa::harness::HarnessError;
use sbvqa::tensor::TensorError;
use sbvqa::text::TextError;

/// Failure of one invocation. `Invalid` covers bad flags, config values
/// and unreadable input files (exit 1); everything else is a runtime
/// failure (exit 2).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<CorruptionError> for CliError {
    fn from(e: CorruptionError) -> Self {
        match e {
            CorruptionError::LevelOutOfRange(_) | CorruptionError::BadLevel(_) | CorruptionError::EmptyBank => {
                Self::Invalid(e.to_string())
            }
            CorruptionError::Audio(AudioError::MalformedHeader(_)) => Self::Invalid(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } | DatasetError::Audio(_) => Self::Runtime(e.to_string()),
            _ => Self::Invalid(e.to_string()),
        }
    }
}

impl From<TextError> for CliError {
    fn from(e: TextError) -> Self {
        match e {
            TextError::Io { .. } => Self::Runtime(e.to_string()),
            _ => Self::Invalid(e.to_string()),
        }
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::Io { .. } => Self::Runtime(e.to_string()),
            _ => Self::Invalid(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Checkpoint(_) => Self::Invalid(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => Self::Invalid(e.to_string()),
            HarnessError::Dataset(d) => d.into(),
            HarnessError::Corruption(c) => c.into(),
            HarnessError::Text(t) => t.into(),
            _ => Self::Runtime(e.to_string()),
        }
    }
}
