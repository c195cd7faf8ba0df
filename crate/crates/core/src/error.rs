use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op} would produce a {rows}x{cols} matrix, above the cap of {cap} entries")]
    DimensionOverflow {
        op: &'static str,
        rows: usize,
        cols: usize,
        cap: usize,
    },

    #[error("entry ({row}, {col}) is not 0 or 1")]
    NonBoolean { row: usize, col: usize },

    #[error("normalization variance must be positive, found {value} at unit {unit}")]
    NonPositiveVariance { unit: usize, value: f64 },

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("singular value decomposition did not converge")]
    SvdNoConvergence,

    #[error("diagonal system for layer {layer}{} is rank deficient (condition estimate {condition:.3e})", block_suffix(*.block))]
    SystemSingular {
        layer: usize,
        block: Option<usize>,
        condition: f64,
    },

    #[error("solved scale for layer {layer}, block {block} has a zero entry at unit {unit}")]
    ZeroScaleEntry {
        layer: usize,
        block: usize,
        unit: usize,
    },

    #[error("realized map of target layer {layer} deviates from the target by up to {deviation:.3e} on the input ball")]
    InexactLayer { layer: usize, deviation: f64 },

    #[error("target layer {layer} has numerical rank {rank}, above the requested rank {requested}")]
    RankExceeded {
        layer: usize,
        rank: usize,
        requested: usize,
    },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{trainer} gradient differs from central finite differences by relative error {rel_error:.3e}")]
    GradientCheck { trainer: &'static str, rel_error: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn block_suffix(block: Option<usize>) -> String {
    block.map(|b| format!(", block {b}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures of the construction itself (as opposed to I/O or bad input).
    pub fn is_construction_failure(&self) -> bool {
        matches!(
            self,
            Error::SystemSingular { .. }
                | Error::ZeroScaleEntry { .. }
                | Error::InexactLayer { .. }
                | Error::RankExceeded { .. }
                | Error::SvdNoConvergence
                | Error::NonFinite(_)
        )
    }
}
