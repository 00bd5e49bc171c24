//! Error type shared by every module in the crate.

use thiserror::Error;

/// Unified error type for registration, I/O and generation routines.
#[derive(Error, Debug)]
pub enum Error {
    /// An operation that needs at least one point received an empty cloud
    /// (or an empty keypoint/descriptor list).
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Underlying filesystem failure while reading or writing.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content. `location` is "line N" for text formats and
    /// "byte N" for binary payloads.
    #[error("parse error in {path} ({location}): {message}")]
    Parse {
        path: String,
        location: String,
        message: String,
    },

    /// Point configuration does not determine a rigid transform
    /// (fewer than 3 effective pairs, or collinear/coincident points).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    /// RANSAC failed to find any model with enough inliers.
    #[error("no consensus: best model had {best_inliers} inliers, needed {required}")]
    NoConsensus {
        best_inliers: usize,
        required: usize,
    },

    /// NDT grid construction kept no voxel (all voxels under `min_points`).
    #[error("ndt grid empty: no voxel reached the minimum point count")]
    GridEmpty,
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for wrapping `std::io::Error` with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Helper for building parse errors at a text line.
    pub fn parse_line(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            location: format!("line {line}"),
            message: message.into(),
        }
    }

    /// Helper for building parse errors at a byte offset.
    pub fn parse_byte(path: impl Into<String>, byte: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            location: format!("byte {byte}"),
            message: message.into(),
        }
    }
}
