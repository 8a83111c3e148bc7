//! Working precision for solver vectors.

use std::fmt::Debug;

use crate::linop::LinearOperator;

/// Floating-point type the iterative solvers store their vectors in.
///
/// Operator applications dispatch to the matching precision path of the
/// operator; scalar recurrences always run in `f64`.
pub trait Real:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Neg<Output = Self>
{
    const ZERO: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn forward(op: &dyn LinearOperator, v: &[Self], out: &mut [Self]);
    fn adjoint(op: &dyn LinearOperator, u: &[Self], out: &mut [Self]);
}

impl Real for f64 {
    const ZERO: Self = 0.0;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    fn forward(op: &dyn LinearOperator, v: &[Self], out: &mut [Self]) {
        op.forward_into(v, out)
    }
    fn adjoint(op: &dyn LinearOperator, u: &[Self], out: &mut [Self]) {
        op.adjoint_into(u, out)
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn forward(op: &dyn LinearOperator, v: &[Self], out: &mut [Self]) {
        op.forward_into_f32(v, out)
    }
    fn adjoint(op: &dyn LinearOperator, u: &[Self], out: &mut [Self]) {
        op.adjoint_into_f32(u, out)
    }
}
