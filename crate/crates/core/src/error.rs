use std::path::PathBuf;

use crate::raster::BandKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: header: {message}")]
    Header { path: PathBuf, message: String },

    #[error("raster payload holds {actual} values, header declares {expected}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unknown band kind `{0}`")]
    UnknownBandKind(String),

    #[error("expected a {expected} band, got {actual}")]
    WrongBand {
        expected: BandKind,
        actual: BandKind,
    },

    #[error("raster has no valid cells")]
    AllNodata,

    #[error("raster is {width}x{height}, need at least {min}x{min}")]
    GridTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("input grids differ in size or georeference")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),

    #[error("degenerate box ({x1}, {y1}, {x2}, {y2})")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("{path}: {message}")]
    Catalog { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("unknown patch id {0}")]
    UnknownPatch(u32),

    #[error("detector `{detector}` cannot accept {layout:?} patches")]
    Capability {
        detector: String,
        layout: crate::raster::ChannelLayout,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
