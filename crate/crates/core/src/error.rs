use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    /// Every b-weight vanished at an IRLS iterate, i.e. all points sit beyond
    /// the redescending cutoff for the current scale and location.
    #[error("all b-weights are zero at iterate {iteration} (location {location}, scale {scale})")]
    DegenerateWeights {
        iteration: usize,
        location: f64,
        scale: f64,
    },

    #[error("coordinate {coord}: {source}")]
    Coordinate { coord: usize, source: Box<Error> },

    #[error("iteration {iteration}, agent {agent}: {source}")]
    Aggregation {
        iteration: usize,
        agent: usize,
        source: Box<Error>,
    },

    #[error("benign agents do not form a connected subgraph")]
    BenignDisconnected,

    #[error("agent {agent} has no benign neighbor with positive weight")]
    EmptyBenignNeighborhood { agent: usize },

    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    PerronNotConverged { iterations: usize, residual: f64 },

    #[error("combined Hessian is singular")]
    SingularHessian,

    #[error("contamination assumption violated: {0}")]
    AssumptionViolated(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at_coordinate(self, coord: usize) -> Self {
        Error::Coordinate {
            coord,
            source: Box::new(self),
        }
    }
}
