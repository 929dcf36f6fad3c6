use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The brute-force oracle was asked for a representation beyond its scale.
    #[error("size error: two_j = {two_j} exceeds the oracle limit {limit}")]
    Size { two_j: u32, limit: u32 },

    /// Every grid node carries zero likelihood.
    #[error("degenerate posterior: all grid likelihoods vanish")]
    DegeneratePosterior,

    /// The requested confidence level cannot be enclosed by any half-width.
    #[error("confidence level {gamma} is unreachable (maximum enclosed mass {reachable})")]
    UnreachableLevel { gamma: f64, reachable: f64 },

    /// A particle budget cannot be split into `p` admissible runs.
    #[error("cannot split N_T = {n_total} into p = {p} runs: {reason}")]
    Divisibility { n_total: u32, p: u32, reason: String },

    /// Power-law fit failed.
    #[error("fit error: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
