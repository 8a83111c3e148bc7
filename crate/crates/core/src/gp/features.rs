use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::linop::{LinearOperator, OpRef, OperatorKind};

/// Feature matrix `Φ[j, i] = σ cos(ω_iᵀx_j / ℓ + b_i)` with θ = (σ, ℓ).
///
/// The unit-lengthscale projections `ω_iᵀx_j` are shared between all
/// operators of a family, so changing (σ, ℓ) never resamples frequencies.
#[derive(Debug, Clone)]
pub struct RffFeatures {
    proj: Arc<Vec<f64>>,
    phases: Arc<Vec<f64>>,
    rows: usize,
    cols: usize,
    sigma: f64,
    ell: f64,
    cos: Vec<f64>,
}

impl RffFeatures {
    /// `inputs` is `m×d` and `omega` is `k×d`, both row-major.
    pub fn new(
        inputs: &[f64],
        dim: usize,
        omega: &[f64],
        phases: &[f64],
        sigma: f64,
        ell: f64,
    ) -> Result<Self> {
        if dim == 0 || inputs.len() % dim != 0 || omega.len() % dim != 0 {
            return Err(Error::Validation(format!(
                "inputs ({}) and frequencies ({}) must be multiples of dim {dim}",
                inputs.len(),
                omega.len()
            )));
        }
        let (rows, cols) = (inputs.len() / dim, omega.len() / dim);
        check_len("rff phases", cols, phases.len())?;
        let mut proj = vec![0.0; rows * cols];
        for (j, x) in inputs.chunks_exact(dim).enumerate() {
            for (i, w) in omega.chunks_exact(dim).enumerate() {
                proj[j * cols + i] = x.iter().zip(w).map(|(a, b)| a * b).sum();
            }
        }
        Self::from_parts(Arc::new(proj), Arc::new(phases.to_vec()), rows, cols, sigma, ell)
    }

    fn from_parts(
        proj: Arc<Vec<f64>>,
        phases: Arc<Vec<f64>>,
        rows: usize,
        cols: usize,
        sigma: f64,
        ell: f64,
    ) -> Result<Self> {
        if !(ell > 0.0) || !sigma.is_finite() || !ell.is_finite() {
            return Err(Error::Validation(format!(
                "rff needs finite σ and ℓ > 0, got σ={sigma}, ℓ={ell}"
            )));
        }
        let cos = proj
            .chunks_exact(cols)
            .flat_map(|row| row.iter().zip(phases.iter()).map(|(p, b)| (p / ell + b).cos()))
            .collect();
        Ok(Self {
            proj,
            phases,
            rows,
            cols,
            sigma,
            ell,
            cos,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    /// Dense copy of Φ.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.cos) * self.sigma
    }
}

impl LinearOperator for RffFeatures {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::RffFeatures
    }
    fn params(&self) -> Vec<f64> {
        vec![self.sigma, self.ell]
    }
    fn num_params(&self) -> usize {
        2
    }

    fn forward_into(&self, v: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.cos.chunks_exact(self.cols)) {
            *o = self.sigma * row.iter().zip(v).map(|(c, x)| c * x).sum::<f64>();
        }
    }

    fn adjoint_into(&self, u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&uj, row) in u.iter().zip(self.cos.chunks_exact(self.cols)) {
            let s = self.sigma * uj;
            for (o, c) in out.iter_mut().zip(row) {
                *o += s * c;
            }
        }
    }

    fn has_param_grad(&self) -> bool {
        true
    }

    fn param_inner_grad_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        let (mut g_sigma, mut g_ell) = (0.0, 0.0);
        let rows = self.cos.chunks_exact(self.cols).zip(self.proj.chunks_exact(self.cols));
        for (&uj, (crow, prow)) in u.iter().zip(rows) {
            let mut c_acc = 0.0;
            let mut s_acc = 0.0;
            for i in 0..self.cols {
                c_acc += crow[i] * v[i];
                let p = prow[i];
                s_acc += (p / self.ell + self.phases[i]).sin() * p * v[i];
            }
            g_sigma += uj * c_acc;
            g_ell += uj * s_acc;
        }
        out[0] = g_sigma;
        out[1] = g_ell * self.sigma / (self.ell * self.ell);
        Ok(())
    }

    fn with_params(&self, params: &[f64]) -> Result<OpRef> {
        check_len("rff params", 2, params.len())?;
        Ok(Arc::new(Self::from_parts(
            self.proj.clone(),
            self.phases.clone(),
            self.rows,
            self.cols,
            params[0],
            params[1],
        )?))
    }
}
