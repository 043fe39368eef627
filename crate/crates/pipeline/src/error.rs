use std::path::PathBuf;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] localdom_core::Error),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("checksum mismatch for {path}: manifest {expected}, file {actual}")]
    ChecksumMismatch { path: PathBuf, expected: String, actual: String },
    #[error("bad schema: {0}")]
    BadSchema(String),
    #[error("stage `{stage}` needs `{missing}` to have run first")]
    StageOrder { stage: String, missing: String },
    #[error("stage `{stage}` read {path}, which is outside the source training split")]
    SourceOnlyViolation { stage: String, path: PathBuf },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line driver.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::BadSchema(_) | PipelineError::Json { .. } => 2,
            PipelineError::MissingFile(_) | PipelineError::ChecksumMismatch { .. } => 3,
            PipelineError::StageOrder { .. } => 4,
            PipelineError::SourceOnlyViolation { .. } => 5,
            PipelineError::Io { .. } | PipelineError::Csv(_) => 6,
            PipelineError::Core(localdom_core::Error::Diverged { .. }) => 7,
            PipelineError::Core(_) => 8,
        }
    }
}
