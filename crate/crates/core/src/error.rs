use thiserror::Error;

use crate::grad::Segment;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate element radii {0:?}; every radius must be positive")]
    DegenerateRadii([f64; 3]),

    #[error("latent code has {got} entries but the decoder expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("mesh is not watertight: edge ({0}, {1}) is used by {2} triangle(s)")]
    NotWatertight(u32, u32, usize),

    #[error("mesh has zero surface area")]
    DegenerateMesh,

    #[error("sample set is empty")]
    EmptySamples,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("non-finite value encountered in the {0} parameters")]
    NonFinite(Segment),

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
