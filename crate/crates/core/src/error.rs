use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed WAV: {0}")]
    MalformedWav(String),

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("WAV file contains no audio")]
    EmptyAudio,

    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),

    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty after trim")]
    EmptyAfterTrim,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sample-rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },

    #[error("singular normal equations; use ridge_lambda > 0")]
    SingularSystem,

    #[error("no positive coefficients to render")]
    NoPositiveCoefficients,

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("label {0:?} is not produced by the predictor")]
    UnknownLabel(String),

    #[error("mismatched component orderings: {0}")]
    ComponentOrdering(String),

    #[error("buffer {index}: {source}")]
    BatchItem {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    External(#[from] ExternalError),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Failures of the external predictor protocol. Each carries whatever the
/// child printed so the caller can see why it failed.
#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("failed to launch predictor {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("predictor exited with {status}; diagnostics:\n{diagnostics}")]
    NonZeroExit { status: String, diagnostics: String },

    #[error("malformed predictor result: {message}; diagnostics:\n{diagnostics}")]
    MalformedResult { message: String, diagnostics: String },

    #[error("predictor result is missing id {id:?}; diagnostics:\n{diagnostics}")]
    MissingId { id: String, diagnostics: String },

    #[error("predictor timed out after {seconds:.1} s; diagnostics:\n{diagnostics}")]
    Timeout { seconds: f64, diagnostics: String },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error with all context layers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } | Error::BatchItem { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl Into<String>) -> Result<T>;
    fn with_context<F: FnOnce() -> String>(self, f: F) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.context(context))
    }

    fn with_context<F: FnOnce() -> String>(self, f: F) -> Result<T> {
        self.map_err(|e| e.context(f()))
    }
}
