use thiserror::Error;

/// Errors raised by the valuation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval: t1 = {t1} > t2 = {t2}")]
    InvalidInterval { t1: f64, t2: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unbounded Lipschitz constant: {0}")]
    Unbounded(String),

    #[error("Picard iteration did not converge at time step {step} (last change {residual:e})")]
    PicardNonConvergence { step: usize, residual: f64 },

    #[error("non-finite value encountered at time step {step}")]
    NonFinite { step: usize },

    #[error("query (t = {t}, s = {s}) lies outside the surface hull")]
    OutOfHull { t: f64, s: f64 },

    #[error("surface does not match deal: {0}")]
    SurfaceMismatch(String),

    #[error("sweep member r = {r} failed: {source}")]
    SweepMember {
        r: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Numerical failures map to exit code 1, everything caused by bad input to 2.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::InvalidSchedule(_)
                | Error::InvalidGrid(_)
                | Error::InvalidInterval { .. }
        )
    }
}
