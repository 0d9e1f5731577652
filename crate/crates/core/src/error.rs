use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A model parameter or argument lies outside its admissible domain.
    #[error("parameter `{name}` out of domain: {reason}")]
    Domain { name: String, reason: String },

    /// Rates too close together for the closed-form transition probability.
    #[error(
        "rates mu[{i}] = {a} and mu[{j}] = {b} are tied within relative gap {gap}; \
         use transition_distribution instead"
    )]
    RateTie {
        i: usize,
        j: usize,
        a: f64,
        b: f64,
        gap: f64,
    },

    #[error("not a valid exchangeable specification: {0}")]
    InvalidExchangeable(String),

    #[error("numerical consistency check failed: {0}")]
    Numerical(String),

    #[error("rejection sampling gave up after {attempts} attempts for cluster {cluster} (n = {n}, floor m = {m})")]
    RejectionCap {
        cluster: usize,
        n: usize,
        m: usize,
        attempts: u64,
    },

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("invalid data: {0}")]
    Data(String),
}

impl Error {
    pub(crate) fn domain(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Domain {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
