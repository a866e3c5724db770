use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header line {line} (byte offset {offset}): {reason}")]
    MalformedHeader {
        line: usize,
        offset: usize,
        reason: String,
    },

    #[error("unsupported storage format {format} at header byte offset {offset}")]
    UnsupportedFormat { format: String, offset: usize },

    #[error("truncated signal stream: needed {needed} bytes, stream ends at byte offset {offset}")]
    TruncatedSignal { needed: usize, offset: usize },

    #[error("csv error at row {row}, column {column}: {reason}")]
    Csv {
        row: usize,
        column: usize,
        reason: String,
    },

    #[error("no ECG channel")]
    NoEcgChannel,

    #[error("no PPG channel")]
    NoPpgChannel,

    #[error("no ABP channel")]
    NoAbpChannel,

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("subband geometry does not match transform parameters: {0}")]
    GeometryMismatch(String),

    #[error("too few peaks: found {found}, need at least {needed}")]
    TooFewPeaks { found: usize, needed: usize },

    #[error("segment rejected: {0}")]
    SegmentRejected(String),

    #[error("target rejected: {0}")]
    TargetRejected(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite activation at step {step}")]
    NonFiniteActivation { step: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("empty series")]
    EmptySeries,

    #[error("not enough values: {0}")]
    TooFewValues(String),

    #[error("zero variance: correlation undefined")]
    ZeroVariance,

    #[error("no qualifying PPG landmark within {0} s of the R peak")]
    NoLandmark(f64),

    #[error("bad file format: {0}")]
    BadFile(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact {path}: run {stage} first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
