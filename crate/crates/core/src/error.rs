use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation is not a valid SO(3) element: {0}")]
    InvalidRotation(String),

    #[error("rotation angle {angle} rad is too close to pi for a unique rotation vector")]
    DegenerateOrientation { angle: f64 },

    #[error("invalid camera model: {0}")]
    InvalidCamera(String),

    /// The point lies behind (or on) the camera's image plane.
    #[error("point is not visible: camera-frame depth {depth} m")]
    NotVisible { depth: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("cannot average an empty list of range samples")]
    EmptySamples,

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("degenerate correspondence configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("inconsistent data: {0}")]
    InconsistentData(String),

    #[error("no fiducial tags observed")]
    NoTags,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),

    #[error("metric is undefined: {0}")]
    UndefinedMetric(String),

    #[error("frame {frame_id}: {source}")]
    Frame {
        frame_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn in_frame(self, frame_id: u64) -> Self {
        match self {
            e @ Error::Frame { .. } => e,
            e => Error::Frame {
                frame_id,
                source: Box::new(e),
            },
        }
    }
}
