use std::path::PathBuf;

use thiserror::Error;

use crate::unit::Unit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("channel {index} out of range for {channels} input channels")]
    ChannelOutOfRange { index: usize, channels: usize },

    #[error("channel {0} is already pruned")]
    AlreadyPruned(usize),

    #[error("singular value position {position} is not retained ({retained} retained)")]
    SingularValueNotRetained { position: usize, retained: usize },

    #[error("unit {0:?} is not in the remaining unit set")]
    InvalidUnit(Unit),

    #[error("importance metric needs at least two remaining units")]
    SingletonUnitSet,

    #[error("cannot realize layer: {0}")]
    Realize(String),

    #[error("zero normalizer: gradient-weighted weight norm is zero")]
    ZeroNormalizer,

    #[error("exponential fit needs at least 3 points with positive loss, got {0}")]
    TooFewPoints(usize),

    #[error("exponential fit is degenerate: all compression rates are equal")]
    DegenerateFit,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layer model has non-positive slope b = {b}; use the per-layer fallback")]
    NonPositiveSlope { b: f64 },

    #[error("rate planner did not converge after {iterations} iterations (i_bar = {i_bar}, squared error = {squared_error})")]
    NotConverged {
        iterations: usize,
        i_bar: f64,
        squared_error: f64,
    },

    #[error("target rate {target} unreachable for layer: best achievable {best}")]
    UnreachableTarget { target: f64, best: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: expected {expected} bytes, found {found}")]
    ByteLength {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: non-finite value at element {index}")]
    NonFinite { path: PathBuf, index: usize },

    #[error("duplicate layer name `{0}`")]
    DuplicateLayer(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_layer(self, layer: &str) -> Self {
        Error::Layer {
            layer: layer.to_string(),
            source: Box::new(self),
        }
    }

    /// True for failures of a numerical procedure rather than bad input data.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotConverged { .. }
            | Error::UnreachableTarget { .. }
            | Error::TooFewPoints(_)
            | Error::DegenerateFit
            | Error::ZeroNormalizer
            | Error::NonPositiveSlope { .. } => true,
            Error::Layer { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
