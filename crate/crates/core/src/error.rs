use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(String),

    #[error("input resolution {height}x{width} is not divisible by {multiple}; pad by {pad_h} rows and {pad_w} columns")]
    Resolution {
        height: usize,
        width: usize,
        multiple: usize,
        pad_h: usize,
        pad_w: usize,
    },

    #[error("normal at pixel ({row}, {col}) has norm {norm}, expected unit length")]
    NonUnitNormal { row: usize, col: usize, norm: f32 },

    #[error("physically invalid decomposition at pixel ({row}, {col}): total shading {value} is negative")]
    NegativeShading { row: usize, col: usize, value: f32 },

    #[error("degenerate camera: look-at point coincides with camera position")]
    DegenerateCamera,

    #[error("empty mask: no valid pixels to average over")]
    EmptyMask,

    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }
}
