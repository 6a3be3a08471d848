use thiserror::Error;

use crate::fem::FEField;
use crate::solver::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

/// State handed back when a Newton solve cannot make progress.
#[derive(Debug)]
pub struct Divergence {
    pub exponent: f64,
    pub last_iterate: FEField,
    pub report: SolveReport,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("region selects no elements: {0}")]
    EmptySubdomain(String),

    #[error("boundary datum `{datum}` is not finite at ({x}, {y})")]
    Evaluation { datum: String, x: f64, y: f64 },

    #[error("point outside the admissible set: {0}")]
    Domain(String),

    #[error("degenerate element {0}")]
    Geometry(usize),

    #[error("non-finite weight encountered during assembly at p = {0}")]
    Overflow(f64),

    #[error("Newton stagnated at p = {}: no damping factor above the floor reduced the residual", .0.exponent)]
    Divergence(Box<Divergence>),

    #[error("linear solve broke down: {0}")]
    SingularSystem(String),

    #[error("degenerate measure: gradient vanishes on the whole region")]
    DegenerateMeasure,

    #[error("variation probe needs at least one interior vertex in the region")]
    DegenerateProbe,

    #[error("invariant violated: {0}")]
    InvariantFailure(String),

    #[error("unknown boundary datum `{0}`")]
    UnknownDatum(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
