use thiserror::Error;

/// Errors raised by the simulation, solver and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A state entry became non-finite. For the network this usually means
    /// `dt` is too large for the stiff `(vbar - v) / epsilon` coupling.
    #[error("numerical blow-up at t = {t}: non-finite value at index {index} ({context})")]
    BlowUp {
        t: f64,
        index: usize,
        context: String,
    },

    #[error("CFL violation at cell (iv = {iv}, ix = {ix}): dt = {dt} exceeds the admissible {max_dt}")]
    Cfl {
        iv: usize,
        ix: usize,
        dt: f64,
        max_dt: f64,
    },

    #[error("scheme failure at t = {t}: density {value} below tolerance at cell (iv = {iv}, ix = {ix})")]
    SchemeFailure {
        t: f64,
        iv: usize,
        ix: usize,
        value: f64,
    },

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("time series misaligned: no reference sample within {tolerance} of t = {t}")]
    Alignment { t: f64, tolerance: f64 },

    #[error("insufficient support: {0}")]
    InsufficientSupport(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
