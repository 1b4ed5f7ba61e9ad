use std::path::PathBuf;

/// Errors produced anywhere in the monitoring pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown environment kind `{0}`")]
    UnknownEnv(String),

    #[error("invalid action {action} for {env} (expects < {count})")]
    InvalidAction {
        env: &'static str,
        action: usize,
        count: usize,
    },

    #[error("cannot step a terminated episode")]
    SteppedTerminal,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty Q-vector")]
    EmptyQVector,

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error("empty episode set")]
    EmptyEpisodeSet,

    #[error("split leaves the {0} side empty")]
    EmptySplit(&'static str),

    #[error("{}:{line}: {detail}", path.display())]
    MalformedLine {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("abstract id {id} out of range for {n} abstract states")]
    IdOutOfRange { id: usize, n: usize },

    #[error("training data must contain both safe and unsafe samples")]
    SingleClass,

    #[error("monitor is frozen after an unseen abstract state")]
    Frozen,

    #[error("inconsistent model: {0}")]
    InvalidModel(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than inputs or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NonFinite(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
