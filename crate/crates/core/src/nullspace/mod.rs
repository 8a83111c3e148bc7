//! Null-space method for equality-constrained optimization.
//!
//! For `min L(θ)` subject to `c(θ) = 0`, one step solves the linearized problem
//!
//! ```text
//! δ = argmin ½‖δ + η∇L‖²  s.t.  J δ = −γ c
//!   = −η∇L + LstSq(J, ηJ∇L − γc, 0)
//!   = −η(I − J⁺J)∇L − γJ⁺c
//! ```
//!
//! using one minimum-norm solve on the constraint Jacobian, which is only
//! accessed through Jacobian-vector products.

mod demos;
mod transform;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::linop::{Adjointed, Composed, Diagonal, LinearOperator, OpRef, OperatorKind};
use crate::solvers::{lstsq, LstSqProblem, SolveConfig};
use crate::vecops::{axpy, norm, scaled, sub};

pub use demos::{
    commutant_demo, sparsity_demo, sphere_demo, BaselineRun, DemoCase, DemoConfig, DemoReport,
    StepRecord,
};
pub use transform::{chain_transform, Adam, GradientDescent, NullSpaceTransform, UpdateRule};

/// Equality constraints `c: R^D → R^k` with Jacobian products.
pub trait ConstraintSpec: Send + Sync + fmt::Debug {
    fn dim_theta(&self) -> usize;
    fn dim_constraint(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Vec<f64>;
    /// `J(θ) v`
    fn jvp(&self, theta: &[f64], v: &[f64]) -> Vec<f64>;
    /// `J(θ)ᵀ u`
    fn tjvp(&self, theta: &[f64], u: &[f64]) -> Vec<f64>;
}

/// `J(θ)` frozen at one point, as a `k × D` operator.
#[derive(Debug, Clone)]
pub struct ConstraintJacobian {
    spec: Arc<dyn ConstraintSpec>,
    theta: Vec<f64>,
}

impl ConstraintJacobian {
    pub fn new(spec: Arc<dyn ConstraintSpec>, theta: &[f64]) -> Result<Self> {
        check_len("constraint Jacobian point", spec.dim_theta(), theta.len())?;
        Ok(Self {
            spec,
            theta: theta.to_vec(),
        })
    }
}

impl LinearOperator for ConstraintJacobian {
    fn rows(&self) -> usize {
        self.spec.dim_constraint()
    }
    fn cols(&self) -> usize {
        self.spec.dim_theta()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::ConstraintJacobian
    }
    fn forward_into(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.spec.jvp(&self.theta, v));
    }
    fn adjoint_into(&self, u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.spec.tjvp(&self.theta, u));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullSpaceConfig {
    /// Loss step size.
    pub eta: f64,
    /// Constraint step size.
    pub gamma: f64,
    pub solver: SolveConfig,
}

impl Default for NullSpaceConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            gamma: 0.5,
            solver: SolveConfig::with_tol(1e-10),
        }
    }
}

impl NullSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.gamma > 0.0 && self.eta.is_finite() && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "step sizes must be positive: eta={} gamma={}",
                self.eta, self.gamma
            )));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖c(θ)‖`
    pub primal_residual: f64,
    /// `‖∇L − Jᵀλ⋆‖ = ‖(I − J⁺J)∇L‖`
    pub stationarity_residual: f64,
    pub lagrange_estimate: Vec<f64>,
}

fn check_point(theta: &[f64], v: &[f64], cs: &dyn ConstraintSpec) -> Result<()> {
    let d = cs.dim_theta();
    check_len("null-space parameters", d, theta.len())?;
    check_len("null-space direction", d, v.len())?;
    check_finite("null-space parameters", theta)?;
    check_finite("null-space direction", v)?;
    if cs.dim_constraint() > d {
        return Err(Error::Config(format!(
            "{} constraints exceed {d} parameters",
            cs.dim_constraint()
        )));
    }
    Ok(())
}

fn jacobian(theta: &[f64], cs: &Arc<dyn ConstraintSpec>) -> Result<OpRef> {
    Ok(Arc::new(ConstraintJacobian::new(cs.clone(), theta)?))
}

/// `J⁺ rhs` via one minimum-norm solve.
fn min_norm(jac: OpRef, rhs: Vec<f64>, cfg: &SolveConfig, stage: &str) -> Result<Vec<f64>> {
    let problem = LstSqProblem::new(jac, rhs, 0.0)?;
    Ok(lstsq(&problem, cfg)?.require_converged(stage)?.x)
}

/// Update `δ = θ_{t+1} − θ_t` for one null-space step.
pub fn nsm_step(
    theta: &[f64],
    grad_loss: &[f64],
    cs: &Arc<dyn ConstraintSpec>,
    cfg: &NullSpaceConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_point(theta, grad_loss, cs.as_ref())?;
    let mut delta = scaled(-cfg.eta, grad_loss);
    if cs.dim_constraint() == 0 {
        return Ok(delta);
    }
    let c = cs.value(theta);
    let jac = jacobian(theta, cs)?;
    let mut rhs = scaled(cfg.eta, &jac.apply_forward(grad_loss)?);
    axpy(-cfg.gamma, &c, &mut rhs);
    let stage = format!("null-space step (‖c‖ = {:.3e})", norm(&c));
    let correction = min_norm(jac, rhs, &cfg.solver, &stage)?;
    axpy(1.0, &correction, &mut delta);
    Ok(delta)
}

/// `(I − J⁺J) v`, the orthogonal projection onto the tangent space at θ.
pub fn project_tangent(
    theta: &[f64],
    v: &[f64],
    cs: &Arc<dyn ConstraintSpec>,
    cfg: &SolveConfig,
) -> Result<Vec<f64>> {
    check_point(theta, v, cs.as_ref())?;
    if cs.dim_constraint() == 0 {
        return Ok(v.to_vec());
    }
    let jac = jacobian(theta, cs)?;
    let jv = jac.apply_forward(v)?;
    let row_part = min_norm(jac, jv, cfg, "tangent projection")?;
    Ok(sub(v, &row_part))
}

pub fn kkt_report(
    theta: &[f64],
    grad_loss: &[f64],
    cs: &Arc<dyn ConstraintSpec>,
    cfg: &SolveConfig,
) -> Result<KktReport> {
    check_point(theta, grad_loss, cs.as_ref())?;
    if cs.dim_constraint() == 0 {
        return Ok(KktReport {
            primal_residual: 0.0,
            stationarity_residual: norm(grad_loss),
            lagrange_estimate: Vec::new(),
        });
    }
    let c = cs.value(theta);
    let jac = jacobian(theta, cs)?;
    let jt: OpRef = Arc::new(Adjointed(jac));
    let problem = LstSqProblem::new(jt.clone(), grad_loss.to_vec(), 0.0)?;
    let multipliers = lstsq(&problem, cfg)?.require_converged("Lagrange multiplier estimate")?.x;
    let fitted = jt.apply_forward(&multipliers)?;
    Ok(KktReport {
        primal_residual: norm(&c),
        stationarity_residual: norm(&sub(grad_loss, &fitted)),
        lagrange_estimate: multipliers,
    })
}

/// Reduction of `min ‖Wx − v‖² s.t. Ax = b` (diagonal `W > 0`) to the
/// minimum-norm problem `min ‖z‖² s.t. A'z = b'`.
#[derive(Debug, Clone)]
pub struct WeightedReduction {
    pub op: OpRef,
    pub b: Vec<f64>,
    inv_weights: Vec<f64>,
    shift: Vec<f64>,
}

impl WeightedReduction {
    /// `x = W⁻¹(z + v)`
    pub fn recover(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("weighted reduction solution", self.shift.len(), z.len())?;
        Ok(z.iter()
            .zip(&self.shift)
            .zip(&self.inv_weights)
            .map(|((zi, vi), wi)| (zi + vi) * wi)
            .collect())
    }
}

pub fn weighted_to_standard(
    weights: &[f64],
    shift: &[f64],
    op: OpRef,
    b: &[f64],
) -> Result<WeightedReduction> {
    let n = op.cols();
    check_len("weights", n, weights.len())?;
    check_len("weighted shift", n, shift.len())?;
    check_len("constraint rhs", op.rows(), b.len())?;
    check_finite("weighted shift", shift)?;
    if let Some(i) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::Validation(format!(
            "weight {i} must be positive and finite, got {}",
            weights[i]
        )));
    }
    let inv_weights: Vec<f64> = weights.iter().map(|w| 1.0 / w).collect();
    let scaled_shift: Vec<f64> = shift.iter().zip(&inv_weights).map(|(v, w)| v * w).collect();
    let b_new = sub(b, &op.apply_forward(&scaled_shift)?);
    let op_new: OpRef = Arc::new(Composed::new(op, Arc::new(Diagonal::constant(inv_weights.clone())))?);
    Ok(WeightedReduction {
        op: op_new,
        b: b_new,
        inv_weights,
        shift: shift.to_vec(),
    })
}

/// `c(θ) = θᵀθ − 1`
#[derive(Debug, Clone, Copy)]
pub struct SphereConstraint {
    pub dim: usize,
}

impl ConstraintSpec for SphereConstraint {
    fn dim_theta(&self) -> usize {
        self.dim
    }
    fn dim_constraint(&self) -> usize {
        1
    }
    fn value(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta.iter().map(|t| t * t).sum::<f64>() - 1.0]
    }
    fn jvp(&self, theta: &[f64], v: &[f64]) -> Vec<f64> {
        vec![2.0 * theta.iter().zip(v).map(|(t, x)| t * x).sum::<f64>()]
    }
    fn tjvp(&self, theta: &[f64], u: &[f64]) -> Vec<f64> {
        scaled(2.0 * u[0], theta)
    }
}

/// Affine constraints `c(θ) = Mθ − r` with a dense `M`.
#[derive(Debug, Clone)]
pub struct AffineConstraint {
    pub matrix: nalgebra::DMatrix<f64>,
    pub offset: Vec<f64>,
}

impl ConstraintSpec for AffineConstraint {
    fn dim_theta(&self) -> usize {
        self.matrix.ncols()
    }
    fn dim_constraint(&self) -> usize {
        self.matrix.nrows()
    }
    fn value(&self, theta: &[f64]) -> Vec<f64> {
        sub(&self.jvp(theta, theta), &self.offset)
    }
    fn jvp(&self, _theta: &[f64], v: &[f64]) -> Vec<f64> {
        (&self.matrix * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec()
    }
    fn tjvp(&self, _theta: &[f64], u: &[f64]) -> Vec<f64> {
        self.matrix.tr_mul(&nalgebra::DVector::from_column_slice(u)).as_slice().to_vec()
    }
}

/// No constraints at all.
#[derive(Debug, Clone, Copy)]
pub struct Unconstrained {
    pub dim: usize,
}

impl ConstraintSpec for Unconstrained {
    fn dim_theta(&self) -> usize {
        self.dim
    }
    fn dim_constraint(&self) -> usize {
        0
    }
    fn value(&self, _theta: &[f64]) -> Vec<f64> {
        Vec::new()
    }
    fn jvp(&self, _theta: &[f64], _v: &[f64]) -> Vec<f64> {
        Vec::new()
    }
    fn tjvp(&self, theta: &[f64], _u: &[f64]) -> Vec<f64> {
        vec![0.0; theta.len()]
    }
}
