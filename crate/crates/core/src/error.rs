use thiserror::Error;

/// Errors raised by the simulation, pricing, hedging and tree routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing channel `{0}`")]
    MissingChannel(String),

    #[error("series truncation cap reached after {terms} terms")]
    SeriesCap { terms: usize },

    #[error("singular or ill-conditioned volatility matrix (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("total market price of risk vanishes at node {node} of path {path}")]
    ZeroMarketPriceOfRisk { path: usize, node: usize },

    #[error("bond integrand psi vanishes at node {node}")]
    ZeroIntegrand { node: usize },

    #[error("structure condition violated: {0}")]
    StructureCondition(String),

    #[error("claim is not attainable in the fine filtration: {0}")]
    NotAttainable(String),

    #[error("invalid tree: {0}")]
    Tree(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// `true` for errors caused by bad inputs rather than by a numerical
    /// breakdown during the computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::ShapeMismatch(_)
                | Error::MissingChannel(_)
                | Error::Tree(_)
                | Error::TooLarge(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
