//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("raster dimension is zero")]
    ZeroDimension,
    #[error("raster dimensions {width}x{height} exceed cap {cap}")]
    DimensionCap { width: usize, height: usize, cap: usize },
    #[error("data length {got} does not match width*height = {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("truncated file")]
    Truncated,
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("patch size {patch} exceeds raster dimension {dim}")]
    PatchTooLarge { patch: usize, dim: usize },
    #[error("stride must be >= 1")]
    ZeroStride,
    #[error("patch list does not match grid")]
    PatchGridMismatch,
    #[error("coherence window must be odd and >= 3, got {0}")]
    BadWindow(usize),
    #[error("raster shapes differ")]
    ShapeMismatch,
    #[error("decorrelation factor must lie in (0, 1]")]
    BadBudgetFactor,
    #[error("snr must be positive")]
    NonPositiveSnr,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("grid must be non-empty and ascending")]
    EmptyGrid,
    #[error("weight file checksum mismatch")]
    ChecksumMismatch,
    #[error("weight tensor shapes do not match the receiving network")]
    WeightShapeMismatch,
    #[error("tensor shape mismatch: {0}")]
    TensorShape(String),
    #[error("non-finite value encountered: {0}")]
    NumericalAbort(String),
    #[error("no valid pixels")]
    NoValidPixels,
    #[error("reference is constant; r-squared undefined")]
    ConstantReference,
    #[error("duplicate region name: {0}")]
    DuplicateRegion(String),
    #[error("unknown region: {0}")]
    UnknownRegion(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for data errors, 3 for numerical aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalAbort(_) => 3,
            _ => 2,
        }
    }
}
