use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Two shapes disagree along a named axis.
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    /// A window, crop or layout does not fit the data it is applied to.
    #[error("{op}: geometry error: {detail}")]
    Geometry { op: &'static str, detail: String },
    /// Invalid parameters or configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed encoded data.
    #[error("decode error: {0}")]
    Decode(String),
    /// A stitched map is missing tiles.
    #[error("assembly error: missing tiles for ROI origins {0}")]
    Assembly(String),
    /// Input data cannot support the requested computation.
    #[error("invalid data: {0}")]
    Data(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn geometry(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Geometry {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn config(detail: impl Into<String>) -> Error {
    Error::Config(detail.into())
}
