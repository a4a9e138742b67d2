use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate bounding box: {0}")]
    DegenerateBBox(String),
    #[error("grid must have at least one cell per side")]
    EmptyGrid,
    #[error("point ({lat}, {lon}) lies outside the grid bounding box")]
    OutOfBounds { lat: f64, lon: f64 },
    #[error("cell ({x}, {y}) outside a {n}x{n} grid")]
    CellOutOfBounds { x: usize, y: usize, n: usize },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("dataset too small: {0}")]
    TooFewTrajectories(String),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unsupported snapshot version {found} (expected {expected}) in {what}")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
