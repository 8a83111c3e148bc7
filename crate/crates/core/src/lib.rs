//! Differentiable matrix-free least squares.
//!
//! The crate solves `min ‖Ax − b‖² + λ²‖x‖²` (or the minimum-norm problem for
//! wide `A`) using only products with `A` and `Aᵀ`, and differentiates the
//! solution with respect to the operator parameters, `b` and `λ` at the cost
//! of two extra solves. On top of that sit a null-space method for
//! equality-constrained optimization and a random-Fourier-feature Gaussian
//! process calibrated through the differentiable solve.

pub mod adjoint;
pub mod bidiag;
pub mod error;
pub mod gp;
pub mod linop;
pub mod nullspace;
pub mod par;
pub mod real;
pub mod solvers;
pub mod testkit;
pub mod vecops;

pub use error::{Error, Result};
pub use linop::{LinearOperator, OpRef, OperatorKind};
pub use solvers::{lsmr, LstSqProblem, SolveConfig, SolveReport, StopReason};
