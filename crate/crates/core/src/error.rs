use bwnet_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: TensorError,
    },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("dataset is empty{0}")]
    EmptyDataset(&'static str),

    #[error("no parameter groups to train")]
    NoParamGroups,

    #[error("stage {requested} cannot run now; expected {expected}")]
    StageOrder { requested: String, expected: String },

    #[error("unknown subject {0}")]
    UnknownSubject(u16),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("unsupported dataset version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

/// Attaches a layer name to tensor errors raised inside that layer.
pub(crate) trait LayerContext<T> {
    fn layer(self, name: &str) -> Result<T>;
}

impl<T> LayerContext<T> for std::result::Result<T, TensorError> {
    fn layer(self, name: &str) -> Result<T> {
        self.map_err(|source| CoreError::Layer {
            layer: name.to_string(),
            source,
        })
    }
}
