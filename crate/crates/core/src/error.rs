use thiserror::Error;

use crate::sim::Trajectory;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its invariant. `field` is a dotted path.
    #[error("{field}: {message}")]
    Config { field: String, message: String },

    #[error("initial integrator state {u_i} is outside [{u_min}, {u_max}]")]
    InvalidInit { u_i: f64, u_min: f64, u_max: f64 },

    /// The simulated state stopped being finite. The partial trajectory is kept
    /// for diagnosis.
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64, partial: Box<Trajectory> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state matrix A is singular; the equilibrium map is undefined")]
    SingularA,

    #[error("Newton iteration diverged at u = {u} (residual {residual:e})")]
    NewtonDiverged { u: f64, residual: f64 },

    /// The sampled steady-state map is not strictly increasing.
    #[error("steady-state map is not increasing between u = {u_a} and u = {u_b} (slope {slope:e})")]
    NonMonotone { u_a: f64, u_b: f64, slope: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no passing gain: k = {k_lo} already fails")]
    NoPassingGain { k_lo: f64 },

    #[error("decay envelope fit failed (R^2 = {r_squared:.4})")]
    FitFailed { r_squared: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("reference {r} is outside the admissible output range [{y_min}, {y_max}]")]
    ReferenceOutOfRange { r: f64, y_min: f64, y_max: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
