use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("vertex {0} has no neighbors")]
    IsolatedVertex(usize),
    #[error("degenerate point set: {0}")]
    DegeneratePoints(String),
    #[error("cluster {cluster}: every face is degenerate under projection")]
    DegeneratePatch { cluster: usize },
    #[error("patch {patch} needs {width}x{height} texels, more than the atlas limit {limit}")]
    PatchTooLarge {
        patch: usize,
        width: usize,
        height: usize,
        limit: usize,
    },
    #[error("uv coordinate out of range on face {face}: ({u}, {v})")]
    UvOutOfRange { face: usize, u: f64, v: f64 },
    #[error("point behind camera (depth {0})")]
    BehindCamera(f64),
    #[error("bundle schema mismatch: expected version {expected}, found {found}")]
    SchemaMismatch { expected: u32, found: u32 },
    #[error("bundle stage mismatch: expected {expected}, found {found}")]
    StageMismatch { expected: String, found: String },
    #[error("unconstrained component containing vertex {vertex}: {vertices} vertices without texel constraints")]
    UnconstrainedComponent { vertex: usize, vertices: usize },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("non-finite energy in term {term} at outer iteration {iteration}")]
    NonFiniteEnergy { term: &'static str, iteration: usize },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::IsolatedVertex(_)
            | Error::DegeneratePoints(_)
            | Error::DegeneratePatch { .. }
            | Error::BehindCamera(_)
            | Error::UnconstrainedComponent { .. }
            | Error::Factorization(_)
            | Error::NonFiniteEnergy { .. } => true,
            Error::Stage { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
