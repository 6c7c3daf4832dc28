use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value produced in layer {layer}")]
    NonFinite { layer: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("client {client} holds {available} samples but a batch needs {needed}")]
    Sampling {
        client: usize,
        needed: usize,
        available: usize,
    },

    #[error("class {class} has {available} samples left but {needed} are required")]
    ClassCapacity {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("client {client} needs {needed} non-major samples but only {available} remain")]
    FillCapacity {
        client: usize,
        needed: usize,
        available: usize,
    },

    #[error("round {round}, client {client}: {source}")]
    Diverged {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("no path between `{from}` and `{to}`")]
    Disconnected { from: String, to: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("decode error: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// 1-based line number of byte `offset` in `text`.
pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    let end = offset.min(text.len());
    text.as_bytes()[..end].iter().filter(|&&b| b == b'\n').count() + 1
}

impl Error {
    pub(crate) fn from_toml(text: &str, err: toml::de::Error) -> Self {
        Error::Parse {
            line: err.span().map_or(1, |s| line_of(text, s.start)),
            message: err.message().to_string(),
        }
    }
}
