use std::path::PathBuf;

use bwnet_core::CoreError;
use bwnet_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("weight file format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("unsupported weight file version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    #[error("weights do not fit the architecture: {0}")]
    WeightMismatch(String),

    #[error("simulation log does not reconcile: {0}")]
    Reconcile(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category printed by the CLI next to the message.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Config(_) | HarnessError::Toml(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Format { .. } | HarnessError::UnsupportedVersion { .. } | HarnessError::Json(_) => "format",
            HarnessError::WeightMismatch(_) => "weights",
            HarnessError::Reconcile(_) => "simulation",
            HarnessError::Core(CoreError::Io(_)) => "io",
            HarnessError::Core(CoreError::Format { .. } | CoreError::UnsupportedVersion { .. } | CoreError::Csv(_)) => {
                "format"
            }
            HarnessError::Core(CoreError::InvalidConfig(_)) => "config",
            HarnessError::Core(_) | HarnessError::Tensor(_) => "model",
        }
    }

    /// Process exit code; 2 is left to argument parsing.
    pub fn exit_code(&self) -> u8 {
        match self.category() {
            "config" => 3,
            "io" => 4,
            "format" => 5,
            "weights" => 6,
            "simulation" => 7,
            _ => 8,
        }
    }
}
