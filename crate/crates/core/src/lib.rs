//! Solver and verification laboratory for the Penrose-Fife phase transition
//! system with Dirichlet temperature data.
//!
//! The library couples the singular energy balance for an absolute
//! temperature `theta > 0` with an Allen-Cahn type kinetic equation for an
//! order parameter `chi` on 1D/2D boxes, discretized by second-order finite
//! differences with lumped quadrature and stepped by a fully implicit Euler
//! scheme with a damped Newton solve. On top of the propagator sit
//! trajectory-level verifiers for the structural properties of the flow:
//! monotone free energy with an exact discrete dissipation balance, long-time
//! regularization of `theta` and `1/theta`, pairwise enthalpy contraction in
//! `H^{-1}`, low-mode squeezing probes, and exponential attraction-rate fits
//! against an equilibrium catalog.

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod initial;
pub mod io;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod spectral;
pub mod stationary;
pub mod stepper;

pub use error::{Error, Result};
pub use grid::Grid;
pub use model::{EnergyReport, MetricParams, Potential, Problem, State};
pub use spectral::ModeBasis;
pub use stepper::{StepConfig, StepStats};
