use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("head dimension must be a positive even number, got {dim}")]
    InvalidDimension { dim: usize },

    #[error("rotary base must be a finite number greater than 1, got {base}")]
    InvalidBase { base: f64 },

    #[error("{context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("grid side must be a positive even number, got {side}")]
    InvalidGrid { side: usize },

    #[error("layout is for side {layout_side}, grid has side {grid_side}")]
    LayoutMismatch { layout_side: usize, grid_side: usize },

    #[error("layout indices are not contiguous from 0: {reason}")]
    InvalidLayout { reason: String },

    #[error("mask row {row} has no visible entries")]
    DegenerateMask { row: usize },

    #[error("query position {query} is below the largest assigned index {max_index}")]
    QueryBehindImage { query: i64, max_index: i64 },

    #[error("finite-difference step must be positive and finite, got {eps}")]
    InvalidEpsilon { eps: f64 },

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("quadrant {quadrant} has {got} eval samples, need at least {need}")]
    SparseQuadrant {
        quadrant: usize,
        got: usize,
        need: usize,
    },

    #[error("caption batch is empty")]
    EmptyBatch,

    #[error("no objects mentioned anywhere in the batch, object ratio is undefined")]
    NoMentions,

    #[error("line {line}: {source}")]
    FixtureLine {
        line: usize,
        source: serde_json::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
