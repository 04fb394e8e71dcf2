//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not a NIfTI-1 file: bad magic {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("not a NIfTI-1 file: sizeof_hdr is {0} (expected 348)")]
    BadHeaderSize(i32),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatum(i16),

    #[error("truncated payload: header declares {expected} bytes of voxel data, file holds {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("non-positive spacing {value} on axis {axis}")]
    NonPositiveSpacing { axis: usize, value: f64 },

    #[error("unsupported dimensionality: {0}")]
    UnsupportedDims(String),

    #[error("sample count mismatch: header implies {expected}, got {actual}")]
    SampleCountMismatch { expected: usize, actual: usize },

    #[error("degenerate affine: voxel-to-world matrix is not invertible")]
    DegenerateAffine,

    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),

    #[error("channel mismatch: {0} vs {1}")]
    ChannelMismatch(usize, usize),

    #[error("label map mismatch between volumes")]
    LabelMapMismatch,

    #[error("label {0} present in the grid but missing from the label map")]
    UnknownLabel(u16),

    #[error("brain mask is empty")]
    EmptyMask,

    #[error("zero intensity variance inside the mask")]
    ZeroVariance,

    #[error("non-finite value at voxel {0}")]
    NonFinite(usize),

    #[error("value {value} cannot be stored as a label")]
    NotALabel { value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("region out of bounds: {0}")]
    OutOfBounds(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
