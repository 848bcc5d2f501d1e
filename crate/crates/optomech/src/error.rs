//! Error types shared across the solver and inference modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The effective damping went non-positive: the loop anti-damps and no
    /// steady state exists. Callers must not clamp; sweeps should surface
    /// the failing point.
    #[error("feedback loop unstable: gamma_eff = {gamma_eff:.6e} rad/s <= 0")]
    Unstable { gamma_eff: f64 },

    /// Sideband weights incompatible with thermal-state inversion
    /// (A- <= A+), typically squashing- or Kerr-dominated data.
    #[error("non-physical sideband weights: a_plus = {a_plus:.6e}, a_minus = {a_minus:.6e}")]
    NonPhysicalWeights { a_plus: f64, a_minus: f64 },

    #[error("linear system singular at omega = {omega:.6e} rad/s")]
    SingularSystem { omega: f64 },

    /// Sideband integration windows would overlap (mechanical linewidth
    /// comparable to the mechanical frequency).
    #[error("sideband windows overlap: width {width:.3e} rad/s vs omega_m {omega_m:.3e} rad/s")]
    WindowOverlap { width: f64, omega_m: f64 },

    #[error("fit did not converge after {iterations} iterations (residual {residual:.6e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("window contains no usable peak: {reason}")]
    DegenerateWindow { reason: String },

    #[error("parameter `{name}` not identifiable: relative sigma {rel_sigma:.3}")]
    NotIdentifiable { name: String, rel_sigma: f64 },

    #[error("forward model does not describe the data: worst residual {worst_sigma:.2} sigma")]
    ModelMismatch { worst_sigma: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
