use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of the operation (off-grid point,
    /// dimension mismatch, infeasible allocation, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A utility response contradicts the samples already collected.
    #[error("consistency error for {wm}: {msg}")]
    Consistency { wm: String, msg: String },

    /// The WMs cannot jointly use the whole resource, so there is nothing
    /// to negotiate.
    #[error("trivial instance: total saturation {total} of {grid} grid units is below the full resource")]
    TrivialInstance { total: u64, grid: u32 },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("instance too large for brute force: {0}")]
    TooLarge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
