use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-manifold edge ({0}, {1}) is shared by {2} faces")]
    NonManifoldEdge(usize, usize, usize),

    #[error("mesh topology: {0}")]
    Topology(String),

    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),

    #[error("orientation has no image-plane component")]
    DegenerateOrientation,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("all 3D matches were rejected as outliers")]
    EmptyInliers,

    #[error("infeasible initialization: camera {frame} optical center lies outside the cavity")]
    InfeasibleInit { frame: usize },

    #[error("requested {requested} visible points, only {achieved} could be sampled")]
    CountShortfall { requested: usize, achieved: usize },

    /// `line` is 1-based; 0 when the problem has no single line.
    #[error("{context}: {}{message}", if *line > 0 { format!("line {line}: ") } else { String::new() })]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
