use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },

    #[error("face {face} is degenerate (repeated vertex index)")]
    DegenerateFace { face: usize },

    #[error("face {face} has zero area")]
    ZeroAreaFace { face: usize },

    #[error("label count {labels} does not match vertex count {vertices}")]
    LabelCount { labels: usize, vertices: usize },

    #[error("surface of {component} is open: edge ({a}, {b}) has no matching opposite half-edge")]
    OpenSurface {
        component: String,
        a: usize,
        b: usize,
    },

    #[error("non-manifold slice: edge ({a}, {b}) is crossed by {count} faces")]
    NonManifoldSlice { a: usize, b: usize, count: usize },

    #[error("invalid affine header: {0}")]
    Affine(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {field}: {msg}")]
    Config { field: String, msg: String },

    #[error("missing observation for plane {plane} at frame {frame}")]
    MissingObservation { plane: String, frame: usize },

    #[error("non-finite {term} at step {step}")]
    NonFinite { step: usize, term: String },

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
