use crate::distmap::PointClass;
use crate::indices::Band;

pub type Result<T> = std::result::Result<T, CoreError>;

/// Error type shared by all core modules.
#[derive(Debug, Clone, thiserror::Error)]
pub enum CoreError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("raster is missing band {0}")]
    MissingBand(Band),

    #[error("band {band} plane has {got} samples, expected {expected}")]
    BandSize {
        band: Band,
        got: usize,
        expected: usize,
    },

    #[error("no confident {0} points under the given thresholds")]
    EmptyClass(PointClass),

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("loss has no scored pixels (all ignored)")]
    NoScoredPixels,

    #[error("non-finite {term} at step {step}")]
    NonFiniteLoss { term: &'static str, step: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("state entry {name}: {detail}")]
    State { name: String, detail: String },
}

impl CoreError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
