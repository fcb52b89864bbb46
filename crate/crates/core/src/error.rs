use std::path::PathBuf;

/// Errors raised across the simulator, attack, and evaluation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("invalid probability {0}: must lie in (0, 1]")]
    InvalidProbability(f64),
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("node index {index} out of range for {n_nodes} nodes")]
    Index { index: usize, n_nodes: usize },
    #[error("graph is disconnected")]
    DisconnectedGraph,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("partition failed: {0}")]
    PartitionFailed(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("knowledge violation: {0}")]
    KnowledgeViolation(String),
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("metric is constant off the diagonal; attack cannot proceed")]
    ConstantMetric,
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid evaluation set: {0}")]
    InvalidEvalSet(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad user input rather than by the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSize(_)
                | Error::InvalidProbability(_)
                | Error::InvalidConfig(_)
                | Error::Parse { .. }
                | Error::Index { .. }
                | Error::DisconnectedGraph
                | Error::Io { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
