use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("non-binary mask value {0}")]
    NonBinaryMask(u8),

    #[error("expected {expected} channel(s), found {found}")]
    ChannelCount { expected: u8, found: u8 },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("AUROC undefined: ground truth has a single class")]
    AurocUndefined,

    #[error("constant input: rank variance is zero")]
    ConstantInput,

    #[error("rank-deficient design; collinear predictors: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("insufficient samples: n = {n} with {params} parameters")]
    InsufficientSamples { n: usize, params: usize },

    #[error("missing predictor {predictor} for image {image_id}")]
    MissingPredictor { image_id: String, predictor: String },

    #[error("missing dice value for image {0}")]
    MissingDice(String),

    #[error("denominator convention mismatch: model uses {model}, records use {records}")]
    ConventionMismatch { model: String, records: String },

    #[error("manifest: {0}")]
    Manifest(String),

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

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
