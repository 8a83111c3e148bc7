use lsqdiff::linop::{LinearOperator, OperatorKind};
use lsqdiff::{OpRef, Result};

/// Wraps an operator with a deliberately wrong adjoint. Used to confirm that
/// the dot test and the gradient checks notice a broken transpose.
#[derive(Debug, Clone)]
pub struct FaultyAdjoint(pub OpRef);

impl LinearOperator for FaultyAdjoint {
    fn rows(&self) -> usize {
        self.0.rows()
    }
    fn cols(&self) -> usize {
        self.0.cols()
    }
    fn kind(&self) -> OperatorKind {
        self.0.kind()
    }
    fn params(&self) -> Vec<f64> {
        self.0.params()
    }
    fn num_params(&self) -> usize {
        self.0.num_params()
    }
    fn forward_into(&self, v: &[f64], out: &mut [f64]) {
        self.0.forward_into(v, out);
    }
    fn adjoint_into(&self, u: &[f64], out: &mut [f64]) {
        self.0.adjoint_into(u, out);
        out[0] += 1e-3 * u[u.len() - 1];
    }
    fn has_param_grad(&self) -> bool {
        self.0.has_param_grad()
    }
    fn param_inner_grad_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        self.0.param_inner_grad_into(u, v, out)
    }
    fn with_params(&self, params: &[f64]) -> Result<OpRef> {
        Ok(std::sync::Arc::new(FaultyAdjoint(self.0.with_params(params)?)))
    }
}
