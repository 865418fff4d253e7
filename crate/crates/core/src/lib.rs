//! Robust downlink precoder design with per-user MSE guarantees.
//!
//! The crate designs linear and Tomlinson-Harashima (THP) precoders for a
//! multi-antenna transmitter serving single-antenna users. Each user's
//! quality of service is an upper bound on the mean square error of its
//! received (modified) symbol, and the bound must hold for every channel in
//! a bounded uncertainty region around the transmitter's estimate.
//!
//! Layout:
//!
//! * [`embed`]: complex matrices and their real block embeddings.
//! * [`uncertainty`]: ellipsoid intersections, sampling and the worst-case
//!   MSE oracle used to certify designs.
//! * [`mse`]: closed-form MSE, SINR decomposition and the MSE-to-SINR floor.
//! * [`conic`]: a small conic program representation, a Clarabel-backed
//!   solver adapter and an independent residual checker.
//! * [`reformulation`]: builders turning problem data into conic programs.
//! * [`design`]: power minimisation, minimax and largest-uncertainty
//!   solvers plus THP user orderings.
//! * [`thp`]: symbol-level THP simulator.
//! * [`experiments`]: Rayleigh Monte Carlo sweeps and their CSV outputs.

// Links the system OpenBLAS/LAPACK used by the PSD cone of the backend.
extern crate openblas_src;

pub mod conic;
pub mod design;
pub mod embed;
pub mod error;
pub mod experiments;
pub mod mse;
pub mod reformulation;
pub mod thp;
pub mod uncertainty;

pub use conic::{ConicProgram, SolveResult, SolveStatus, Tolerances};
pub use design::{BisectionConfig, DesignOutcome};
pub use embed::{ComplexMatrix, RealEmbeddedMatrix, RealEmbeddedRow};
pub use error::{Error, Result};
pub use mse::{Design, QosTargets};
pub use reformulation::{PrecodingMode, ProblemData};
pub use uncertainty::{Ellipsoid, UncertaintyRegion};

pub use num_complex::Complex64;
