//! Matrix-free linear operators.
//!
//! Every solver and gradient rule in the crate sees a matrix only through
//! [`LinearOperator`]: a forward product, an adjoint product, and (for
//! parameterized operators) the gradient of the bilinear form
//! `θ ↦ ⟨u, A(θ) v⟩`. Adjoints are supplied explicitly by each operator and
//! policed by [`dot_test`].

mod fixture;
mod kinds;

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::vecops::{dot, norm};

pub use fixture::{read_dense_csv, write_dense_csv};
pub use kinds::{Adjointed, Composed, Convolution1D, Dense, Diagonal, Scaled, Stacked};

/// Shared handle to a type-erased operator.
pub type OpRef = Arc<dyn LinearOperator>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    Dense,
    Diagonal,
    Convolution1D,
    RffFeatures,
    ConstraintJacobian,
    Stacked,
    Adjointed,
    Scaled,
    Composed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

/// A linear map `A(θ): R^cols → R^rows` accessed only through products.
///
/// Implementors provide the unchecked `*_into` kernels; the `apply_*`
/// methods validate shapes and allocate. Operators are immutable: a new
/// parameter vector yields a new operator through [`with_params`].
///
/// [`with_params`]: LinearOperator::with_params
pub trait LinearOperator: Send + Sync + fmt::Debug {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn kind(&self) -> OperatorKind;

    /// Flat parameter vector θ. Empty for constant operators.
    fn params(&self) -> Vec<f64> {
        Vec::new()
    }

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// `out = A v`. Slices must already have the right lengths.
    fn forward_into(&self, v: &[f64], out: &mut [f64]);

    /// `out = Aᵀ u`.
    fn adjoint_into(&self, u: &[f64], out: &mut [f64]);

    /// Single-precision `out = A v`. The default rounds through the
    /// double-precision kernel; operators with a native f32 path override it.
    fn forward_into_f32(&self, v: &[f32], out: &mut [f32]) {
        let v64: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let mut o64 = vec![0.0; out.len()];
        self.forward_into(&v64, &mut o64);
        for (o, x) in out.iter_mut().zip(o64) {
            *o = x as f32;
        }
    }

    fn adjoint_into_f32(&self, u: &[f32], out: &mut [f32]) {
        let u64: Vec<f64> = u.iter().map(|&x| x as f64).collect();
        let mut o64 = vec![0.0; out.len()];
        self.adjoint_into(&u64, &mut o64);
        for (o, x) in out.iter_mut().zip(o64) {
            *o = x as f32;
        }
    }

    fn has_param_grad(&self) -> bool {
        false
    }

    /// `out = ∇θ ⟨u, A(θ) v⟩`, with `out.len() == num_params()`.
    fn param_inner_grad_into(&self, _u: &[f64], _v: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::Unsupported {
            capability: "param_inner_grad",
            kind: self.kind(),
        })
    }

    /// The same operator family evaluated at a different θ.
    fn with_params(&self, _params: &[f64]) -> Result<OpRef> {
        Err(Error::Unsupported {
            capability: "with_params",
            kind: self.kind(),
        })
    }

    fn shape(&self) -> Shape {
        Shape {
            rows: self.rows(),
            cols: self.cols(),
        }
    }

    fn apply_forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_forward input", self.cols(), v.len())?;
        let mut out = vec![0.0; self.rows()];
        self.forward_into(v, &mut out);
        Ok(out)
    }

    fn apply_adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_adjoint input", self.rows(), u.len())?;
        let mut out = vec![0.0; self.cols()];
        self.adjoint_into(u, &mut out);
        Ok(out)
    }

    fn param_inner_grad(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if !self.has_param_grad() {
            return Err(Error::Unsupported {
                capability: "param_inner_grad",
                kind: self.kind(),
            });
        }
        check_len("param_inner_grad u", self.rows(), u.len())?;
        check_len("param_inner_grad v", self.cols(), v.len())?;
        let mut out = vec![0.0; self.num_params()];
        self.param_inner_grad_into(u, v, &mut out)?;
        Ok(out)
    }
}

/// Outcome of [`dot_test`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotTest {
    /// `max |⟨u, Av⟩ − ⟨Aᵀu, v⟩|` over the trials.
    pub max_discrepancy: f64,
    /// The same discrepancy divided by `‖u‖‖v‖‖A‖_est` per trial.
    pub max_relative: f64,
}

/// Checks that the adjoint really transposes the forward map on random
/// standard-normal pairs drawn from `seed`.
pub fn dot_test(op: &dyn LinearOperator, trials: usize, seed: u64) -> Result<DotTest> {
    if trials == 0 {
        return Err(Error::Validation("dot_test needs at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (op.rows(), op.cols());
    let mut worst = DotTest {
        max_discrepancy: 0.0,
        max_relative: 0.0,
    };
    for _ in 0..trials {
        let u: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let av = op.apply_forward(&v)?;
        let atu = op.apply_adjoint(&u)?;
        let gap = (dot(&u, &av) - dot(&atu, &v)).abs();
        let (nu, nv) = (norm(&u), norm(&v));
        let anorm = (norm(&av) / nv).max(norm(&atu) / nu);
        let scale = nu * nv * anorm;
        let rel = if scale > 0.0 { gap / scale } else { gap };
        worst.max_discrepancy = worst.max_discrepancy.max(gap);
        worst.max_relative = worst.max_relative.max(rel);
    }
    Ok(worst)
}

/// Materializes an operator column by column. Test scale only.
pub fn to_dense(op: &dyn LinearOperator) -> nalgebra::DMatrix<f64> {
    let (m, n) = (op.rows(), op.cols());
    let mut mat = nalgebra::DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        op.forward_into(&e, &mut col);
        mat.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    mat
}
