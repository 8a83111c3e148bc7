//! Least-squares solution operators.
//!
//! `LstSq(A, b, λ)` is the minimizer of `‖Ax − b‖² + λ²‖x‖²`, or for a wide
//! `A` with `λ = 0` the minimum-norm solution of `Ax = b`. [`lsmr`] is the
//! matrix-free solver used everywhere else in the crate; [`cgls`] solves the
//! normal equations with conjugate gradients and serves as the robustness
//! baseline; [`dense_lstsq`] is the QR-based test oracle.

mod cgls;
mod dense;
mod lsmr;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::linop::OpRef;

pub use cgls::cgls;
pub use dense::{dense_lstsq, make_illconditioned, thin_q};
pub use lsmr::lsmr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// `m ≥ n`
    Tall,
    /// `m < n`
    Wide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            _ => Err(Error::Parse(format!("unknown precision {s:?}"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

/// A least-squares problem `LstSq(A, b, λ)`. `A` is assumed to have full rank.
#[derive(Debug, Clone)]
pub struct LstSqProblem {
    pub op: OpRef,
    pub b: Vec<f64>,
    pub lambda: f64,
}

impl LstSqProblem {
    pub fn new(op: OpRef, b: Vec<f64>, lambda: f64) -> Result<Self> {
        check_len("least-squares rhs", op.rows(), b.len())?;
        check_finite("least-squares rhs", &b)?;
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Validation(format!(
                "regularization weight must be finite and ≥ 0, got {lambda}"
            )));
        }
        Ok(Self { op, b, lambda })
    }

    pub fn mode(&self) -> Mode {
        if self.op.rows() >= self.op.cols() {
            Mode::Tall
        } else {
            Mode::Wide
        }
    }

    pub fn rows(&self) -> usize {
        self.op.rows()
    }

    pub fn cols(&self) -> usize {
        self.op.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub atol: f64,
    pub btol: f64,
    /// Stop once the condition estimate exceeds this.
    pub conlim: f64,
    /// `None` means `2·min(m, n) + 100`.
    pub max_iter: Option<usize>,
    pub precision: Precision,
    /// Number of recent right Lanczos vectors each new one is
    /// reorthogonalized against in LSMR; 0 disables.
    pub reorth_window: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            atol: 1e-6,
            btol: 1e-6,
            conlim: 1e8,
            max_iter: None,
            precision: Precision::Double,
            reorth_window: 0,
        }
    }
}

impl SolveConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            atol: tol,
            btol: tol,
            ..Self::default()
        }
    }

    /// Divides both tolerances by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            atol: self.atol / factor,
            btol: self.btol / factor,
            ..*self
        }
    }

    pub fn iteration_cap(&self, m: usize, n: usize) -> usize {
        self.max_iter.unwrap_or(2 * m.min(n) + 100)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0 && self.btol > 0.0 && self.conlim > 0.0) {
            return Err(Error::Config(format!(
                "tolerances must be positive: atol={} btol={} conlim={}",
                self.atol, self.btol, self.conlim
            )));
        }
        if self.max_iter == Some(0) {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    MaxIter,
    ConLimExceeded,
    ExactBreakdown,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖[Ax − b; λx]‖`
    pub resid_norm: f64,
    /// `‖Aᵀ(Ax − b) + λ²x‖`
    pub normal_resid_norm: f64,
    pub anorm_est: f64,
    pub cond_est: f64,
    pub stop_reason: StopReason,
    /// Per-iteration estimate of `‖Aᵀr_k + λ²x_k‖`.
    pub normal_resid_history: Vec<f64>,
}

impl SolveReport {
    pub(crate) fn zero(n: usize) -> Self {
        Self {
            x: vec![0.0; n],
            iterations: 0,
            resid_norm: 0.0,
            normal_resid_norm: 0.0,
            anorm_est: 0.0,
            cond_est: 1.0,
            stop_reason: StopReason::Converged,
            normal_resid_history: Vec::new(),
        }
    }

    pub fn converged(&self) -> bool {
        matches!(
            self.stop_reason,
            StopReason::Converged | StopReason::ExactBreakdown
        )
    }

    /// Turns anything other than convergence into an error tagged with `stage`.
    pub fn require_converged(self, stage: &str) -> Result<Self> {
        if self.converged() {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                stage: stage.to_string(),
                stop: self.stop_reason,
                iterations: self.iterations,
            })
        }
    }
}

/// `LstSq(A, b, λ)` via LSMR.
pub fn lstsq(problem: &LstSqProblem, cfg: &SolveConfig) -> Result<SolveReport> {
    lsmr(problem, cfg)
}
