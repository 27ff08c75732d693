use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("untagged facet {facet} with midpoint ({x}, {y})")]
    UntaggedFacet { facet: usize, x: f64, y: f64 },

    #[error("edge {0} is not a boundary facet")]
    NotBoundaryFacet(usize),

    #[error("degenerate cell {cell}: signed area {area:e}")]
    DegenerateCell { cell: usize, area: f64 },

    #[error("invalid slip law parameters: {0}")]
    InvalidLaw(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("state has length {found}, expected {expected}")]
    StateLength { expected: usize, found: usize },

    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("Newton did not converge after {iterations} iterations (residual {residual:e})")]
    Divergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("time step {step} (t = {t}) failed: {source}")]
    StepFailed {
        step: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("continuation failed at load {load}: {source}")]
    ContinuationFailed {
        load: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("stability hypothesis violated: lambda = {lambda} must be below c_lambda = {c_lambda}")]
    Stability { lambda: f64, c_lambda: f64 },

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code convention of the command line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UntaggedFacet { .. }
            | Error::InvalidLaw(_)
            | Error::Json(_)
            | Error::Stability { .. } => 3,
            _ => 2,
        }
    }
}
