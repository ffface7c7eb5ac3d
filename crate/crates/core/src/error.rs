use std::path::PathBuf;

/// Errors raised anywhere in the pooling pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("JSON error in {context}: {message}")]
    Json { context: String, message: String },

    #[error("frame numbering gap: expected frame {expected}, found {found}")]
    SourceGap { expected: usize, found: usize },
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        index: usize,
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("clip metadata missing: {0}")]
    MetaMissing(String),
    #[error("raw stream has {trailing} trailing bytes that do not form a whole frame")]
    PartialFrame { trailing: usize },
    #[error("clip truncated: need {needed} frames for {seconds} whole seconds, got {got}")]
    TruncatedClip { needed: usize, got: usize, seconds: usize },

    #[error("empty window: fps must be at least 1")]
    EmptyWindow,
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("weight vector has {weights} entries but window has {frames} frames")]
    WeightMismatch { weights: usize, frames: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("incomplete pipeline: {0}")]
    IncompletePipeline(String),
    #[error("prompt error: {0}")]
    Prompt(String),

    #[error("vector dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroVector,

    #[error("empty token sequence")]
    EmptySequence,
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape error: {0}")]
    Shape(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error class, mapped one-to-one onto CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io = 1,
    Parameter = 2,
    Integrity = 3,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, err: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            message: err.to_string(),
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::Image { .. } => "Image",
            Error::Json { .. } => "Json",
            Error::SourceGap { .. } => "SourceGap",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::MetaMissing(_) => "MetaMissing",
            Error::PartialFrame { .. } => "PartialFrame",
            Error::TruncatedClip { .. } => "TruncatedClip",
            Error::EmptyWindow => "EmptyWindow",
            Error::BadParameter(_) => "BadParameter",
            Error::WeightMismatch { .. } => "WeightMismatch",
            Error::Parse { .. } => "ParseError",
            Error::IncompletePipeline(_) => "IncompletePipeline",
            Error::Prompt(_) => "PromptError",
            Error::DimMismatch(..) => "DimMismatch",
            Error::ZeroVector => "ZeroVector",
            Error::EmptySequence => "EmptySequence",
            Error::EmptyBatch => "EmptyBatch",
            Error::Shape(_) => "ShapeError",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::Image { .. } => ErrorClass::Io,
            Error::Json { .. }
            | Error::MetaMissing(_)
            | Error::EmptyWindow
            | Error::BadParameter(_)
            | Error::Parse { .. }
            | Error::Prompt(_)
            | Error::DimMismatch(..)
            | Error::ZeroVector
            | Error::EmptySequence
            | Error::EmptyBatch
            | Error::Shape(_) => ErrorClass::Parameter,
            Error::SourceGap { .. }
            | Error::DimensionMismatch { .. }
            | Error::PartialFrame { .. }
            | Error::TruncatedClip { .. }
            | Error::WeightMismatch { .. }
            | Error::IncompletePipeline(_) => ErrorClass::Integrity,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class() as i32
    }
}
