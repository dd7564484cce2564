// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON at byte {offset}: {message}")]
    MalformedJson { offset: usize, message: String },

    #[error("missing field `{field}` in {record}")]
    MissingField { field: &'static str, record: String },

    #[error("annotation {annotation} references missing {kind} {target}")]
    DanglingReference {
        annotation: u64,
        kind: &'static str,
        target: u64,
    },

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },

    #[error("invalid {record}: {reason}")]
    InvalidRecord { record: String, reason: String },

    #[error("polygon needs at least 3 vertices (6 coordinates), got {coords} coordinates")]
    DegeneratePolygon { coords: usize },

    #[error("RLE counts sum to {actual}, expected {expected}")]
    LengthMismatch { expected: u64, actual: u64 },

    #[error("invalid RLE string: {0}")]
    InvalidRle(String),

    #[error("transform would produce an empty {width}x{height} mask")]
    DegenerateOutput { width: u32, height: u32 },

    #[error("dataset has no annotations")]
    EmptyDataset,

    #[error("no placement found after {attempts} attempts")]
    PlacementNotFound { attempts: u32 },

    #[error("paste at ({x}, {y}) of a {width}x{height} patch leaves the canvas")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: u32,
        height: u32,
    },

    #[error("image {image_id} has no eligible small objects")]
    NoCandidates { image_id: u64 },

    #[error("missing image file {0}")]
    MissingImageFile(PathBuf),

    #[error("infeasible synthetic corpus spec: {0}")]
    InfeasibleSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("image codec error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
