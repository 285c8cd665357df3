//! Dense linear algebra, nonlinear solving, eigenvalues, and implicit DAE
//! integration. Everything here is allocation-simple dense f64 work sized for
//! systems of a few hundred unknowns.

mod dae;
mod eig;
mod lu;
mod matrix;
mod newton;

pub use dae::{
    derivative_from_state, solve_consistent_algebraic, trapezoidal_step, DaeSystem, StepMethod,
    StepStats, StepperOptions, TrapezoidalStepper,
};
pub use eig::{eigenvalues, hessenberg, participation_factors, right_eigenvector, ComplexSpectrum};
pub use lu::{lu_factor, lu_solve, ComplexLu, LuFactors};
pub use matrix::DenseMatrix;
pub use newton::{fd_jacobian, newton_solve, newton_solve_with_jacobian, NewtonResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular matrix (pivot {pivot:.3e} below threshold {threshold:.3e} at row {row})")]
    SingularMatrix {
        row: usize,
        pivot: f64,
        threshold: f64,
    },
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("QR eigenvalue iteration stalled; {} of {total} eigenvalues recovered", converged.len())]
    EigNonConvergence {
        converged: Vec<num_complex::Complex64>,
        total: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("integration step rejected: {0}")]
    StepRejected(String),
}
