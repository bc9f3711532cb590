use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the restricted mapping-literal parser.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("response contains no '{{' block")]
    NoBraceBlock,
    #[error("brace block starting at byte {start} is never closed")]
    UnbalancedBraces { start: usize },
    #[error("value for key {key:?} is not a string or list of strings")]
    NonStringValue { key: String },
    #[error("malformed literal at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {index} has (near) zero norm")]
    ZeroRow { index: usize },
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("matrix must have at least one row and one column")]
    EmptyMatrix,
    #[error("score row has no columns")]
    EmptyRow,
    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("{0}")]
    InvalidInput(String),
    #[error("classifier row {index} is flagged normalized but has norm {norm}")]
    NotNormalized { index: usize, norm: f64 },

    #[error("backward called without a forward trace for the current parameters")]
    NoForwardTrace,
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("non-finite loss at epoch {epoch}, step {step}: {diagnostic}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        diagnostic: String,
    },

    #[error("need at least 2 classes for a base/new split, got {0}")]
    TooFewClasses(usize),
    #[error("harmonic mean needs non-negative inputs, got ({0}, {1})")]
    NegativeInput(f64, f64),
    #[error("class coverage mismatch: {0}")]
    ClassCoverage(String),
    #[error("attribute schema is ragged or misaligned: {0}")]
    RaggedAttributeSchema(String),

    #[error("http error {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned an empty response")]
    EmptyResponse,
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: usize },
    #[error("malformed response for {class_name:?}: {reason}")]
    MalformedResponse { class_name: String, reason: String },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("bad prompt template: {0}")]
    BadTemplate(String),
    #[error("environment variable {0} is not set")]
    MissingCredential(String),

    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroRow { .. } => "ZeroRow",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::NonPositiveTau(_) => "NonPositiveTau",
            Error::NonFinite { .. } => "NonFinite",
            Error::EmptyMatrix => "EmptyMatrix",
            Error::EmptyRow => "EmptyRow",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::InvalidInput(_) => "InvalidInput",
            Error::NotNormalized { .. } => "NotNormalized",
            Error::NoForwardTrace => "NoForwardTrace",
            Error::EmptyClass(_) => "EmptyClass",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::TooFewClasses(_) => "TooFewClasses",
            Error::NegativeInput(..) => "NegativeInput",
            Error::ClassCoverage(_) => "ClassCoverage",
            Error::RaggedAttributeSchema(_) => "RaggedAttributeSchema",
            Error::Http { .. } => "HttpError",
            Error::Transport(_) => "TransportError",
            Error::EmptyResponse => "EmptyResponse",
            Error::RateLimited { .. } => "RateLimited",
            Error::MalformedResponse { .. } => "MalformedResponse",
            Error::Parse(ParseError::NoBraceBlock) => "NoBraceBlock",
            Error::Parse(ParseError::UnbalancedBraces { .. }) => "UnbalancedBraces",
            Error::Parse(ParseError::NonStringValue { .. }) => "NonStringValue",
            Error::Parse(ParseError::Malformed { .. }) => "MalformedLiteral",
            Error::BadTemplate(_) => "BadTemplate",
            Error::MissingCredential(_) => "MissingCredential",
            Error::BadMagic { .. } => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::TrailingBytes(_) => "TrailingBytes",
            Error::MissingFile(_) => "MissingFile",
            Error::Io { .. } => "Io",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
