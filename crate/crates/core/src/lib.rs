//! Phasor-mode transient simulation of converter-dominated power systems.
//!
//! The crate couples dynamic device models (grid-following and grid-forming
//! converters, a virtual synchronous machine, a second-order synchronous
//! machine) to an algebraic network through a semi-explicit DAE, integrates
//! with an implicit trapezoidal rule, and audits the port-Hamiltonian energy
//! bookkeeping of every device at every accepted step. On top of the
//! simulator sit a small-signal layer (linearization, eigenvalue sweeps) and
//! the transient-slack-capability condition checks.
//!
//! Modules:
//! - [`numerics`]: dense linear algebra, Newton solving, QR eigenvalues, DAE stepping
//! - [`network`]: bus/branch/load data, Y-bus assembly, Newton–Raphson power flow
//! - [`devices`]: the device model family behind [`devices::DeviceModel`]
//! - [`ph`]: storage functions, J/R/G assembly, power-balance audits, TSC checks
//! - [`analysis`]: linearization, eigenvalue sweeps, trajectory classification
//! - [`scenario`], [`sim`], [`output`]: scenario files, the simulation driver, file outputs

pub mod analysis;
pub mod devices;
pub mod network;
pub mod numerics;
pub mod output;
pub mod ph;
pub mod scenario;
pub mod sim;

pub use num_complex::Complex64;

/// Angular base for a 60 Hz system, rad/s.
pub const OMEGA_B: f64 = 2.0 * std::f64::consts::PI * 60.0;

/// Synchronous frequency in per unit.
pub const OMEGA_S: f64 = 1.0;
