use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic bytes: expected OPENCAM1")]
    BadMagic,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u16),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode failure: {0}")]
    Decode(String),
    #[error("unsupported PNG bit depth {0}")]
    UnsupportedBitDepth(u8),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("colored-noise field is constant and cannot be normalized")]
    DegenerateNoise,
    #[error("degenerate key: {0}")]
    DegenerateKey(String),
    #[error("channel mismatch: {0} vs {1}")]
    ChannelMismatch(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("file missing: {0}")]
    FileMissing(PathBuf),
    #[error("unknown kind `{0}`")]
    UnknownKind(String),
    #[error("empty measurement set")]
    EmptySet,
    #[error("objective became non-finite at outer iteration {iteration}")]
    NonFiniteObjective { iteration: usize },
    #[error("image too small for metric: side {side} < {min}")]
    TooSmall { side: usize, min: usize },
    #[error("reference tensor is all zeros")]
    ZeroTruth,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing study: {0}")]
    MissingStudy(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BadMagic => "BadMagic",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::Io { .. } => "IoFailure",
            Error::Decode(_) => "DecodeFailure",
            Error::UnsupportedBitDepth(_) => "UnsupportedBitDepth",
            Error::InvalidTensor(_) => "InvalidTensor",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidDims(_) => "InvalidDims",
            Error::DegenerateNoise => "DegenerateNoise",
            Error::DegenerateKey(_) => "DegenerateKey",
            Error::ChannelMismatch(..) => "ChannelMismatch",
            Error::DimMismatch(_) => "DimMismatch",
            Error::FileMissing(_) => "FileMissing",
            Error::UnknownKind(_) => "UnknownKind",
            Error::EmptySet => "EmptySet",
            Error::NonFiniteObjective { .. } => "NonFiniteObjective",
            Error::TooSmall { .. } => "TooSmall",
            Error::ZeroTruth => "ZeroTruth",
            Error::Config(_) => "ConfigError",
            Error::MissingStudy(_) => "MissingStudy",
            Error::Json(_) => "JsonError",
            Error::Csv(_) => "CsvError",
        }
    }
}
