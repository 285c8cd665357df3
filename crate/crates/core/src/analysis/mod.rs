//! Small-signal layer: trajectory classification, linearization of the
//! coupled DAE around an equilibrium, and parameter sweeps of the critical
//! eigenvalues.

mod classify;
mod linearize;
mod sweep;

pub use classify::{classify_trajectory, TrajectoryClass};
pub use linearize::{linearize_dae, linearize_prepared, LinearizedSystem, GAUGE_TOLERANCE};
pub use sweep::{eigen_sweep, parse_sweep_param, SweepParam, SweepPoint, SweepResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("point is not an equilibrium (residual {0:.3e})")]
    NotEquilibrium(f64),
    #[error("limiter active at the equilibrium (rho = {rho:.4} at {device})")]
    ActiveLimiter { device: String, rho: f64 },
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error(transparent)]
    Sim(#[from] Box<crate::sim::SimError>),
    #[error("sweep grid must be strictly monotone")]
    NonMonotoneGrid,
    #[error("unknown sweep parameter `{0}` (use Cdc, Tslack, imax, or M)")]
    UnknownSweepParam(String),
}

impl From<crate::sim::SimError> for AnalysisError {
    fn from(e: crate::sim::SimError) -> Self {
        AnalysisError::Sim(Box::new(e))
    }
}
