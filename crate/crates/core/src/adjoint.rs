//! Reverse-mode gradients through `x = LstSq(A(θ), b, λ)`.
//!
//! Given `∇ₓμ` for a downstream scalar `μ`, the pullback returns `∇θμ`,
//! `∇bμ` and `∇λμ` using exactly two additional least-squares solves and the
//! operator's [`param_inner_grad`](crate::linop::LinearOperator::param_inner_grad)
//! hook. Nothing is differentiated through the solver iterations.
//!
//! Tall (`m ≥ n`), with `ξ = (AᵀA + λ²I)⁻¹∇ₓμ` and `r = Ax − b`:
//!
//! ```text
//! ∇bμ = LstSq(Aᵀ, ∇ₓμ, λ)            = Aξ
//! ξ   = LstSq(A, ∇bμ, 0)
//! ∇θμ = −∇θ[⟨r, A(θ)ξ⟩ + ⟨∇bμ, A(θ)x⟩]
//! ∇λμ = −2λ⟨ξ, x⟩
//! ```
//!
//! Wide (`m ≤ n`), with `y = (AAᵀ + λ²I)⁻¹b` and `r = Aᵀ∇bμ − ∇ₓμ`:
//!
//! ```text
//! y   = LstSq(Aᵀ, x, 0)
//! ∇bμ = LstSq(Aᵀ, ∇ₓμ, λ)
//! ∇θμ = −∇θ[⟨∇bμ, A(θ)x⟩ + ⟨y, A(θ)r⟩]
//! ∇λμ = −2λ⟨∇bμ, y⟩
//! ```

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{check_finite, check_len, Error, Result};
use crate::linop::{Adjointed, OpRef};
use crate::solvers::{lstsq, LstSqProblem, Mode, SolveConfig, SolveReport};
use crate::vecops::{dot, sub};

/// Orientation of the assembled `g(θ)` term, pinned by the finite-difference tests.
const PARAM_TERM_SIGN: f64 = -1.0;
/// Orientation of `∇λμ` in both cases, pinned likewise.
const LAMBDA_TERM_SIGN: f64 = -1.0;

/// Factor by which inner solves tighten the forward tolerances.
pub const INNER_TIGHTENING: f64 = 10.0;

/// `∇ₓμ` at the forward solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Cotangent {
    pub grad_x: Vec<f64>,
}

impl Cotangent {
    pub fn new(grad_x: Vec<f64>) -> Result<Self> {
        check_finite("cotangent", &grad_x)?;
        Ok(Self { grad_x })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grad_params: Vec<f64>,
    pub grad_b: Vec<f64>,
    pub grad_lambda: f64,
    /// Least-squares solves performed to produce this bundle.
    pub inner_solves: usize,
}

/// Intermediate vectors of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointScratch {
    /// Tall: `Ax − b`. Wide: `Aᵀ∇bμ − ∇ₓμ`.
    pub residual: Vec<f64>,
    /// Tall only: `(AᵀA + λ²I)⁻¹∇ₓμ`.
    pub xi: Option<Vec<f64>>,
    /// Wide only: `(AAᵀ + λ²I)⁻¹b`.
    pub y: Option<Vec<f64>>,
}

struct InnerSolver<'a> {
    cfg: SolveConfig,
    count: usize,
    counter: Option<&'a AtomicUsize>,
}

impl InnerSolver<'_> {
    fn solve(&mut self, op: OpRef, rhs: Vec<f64>, lambda: f64, stage: &str) -> Result<Vec<f64>> {
        self.count += 1;
        if let Some(c) = self.counter {
            c.fetch_add(1, Ordering::Relaxed);
        }
        let problem = LstSqProblem::new(op, rhs, lambda).map_err(|e| e.in_stage(stage))?;
        let report = lstsq(&problem, &self.cfg).map_err(|e| e.in_stage(stage))?;
        Ok(report.require_converged(stage)?.x)
    }
}

fn check_inputs(problem: &LstSqProblem, x: &[f64], cot: &Cotangent) -> Result<()> {
    let n = problem.cols();
    check_len("adjoint: forward solution", n, x.len())?;
    check_len("adjoint: cotangent", n, cot.grad_x.len())?;
    check_finite("adjoint: forward solution", x)?;
    check_finite("adjoint: cotangent", &cot.grad_x)?;
    let op = &problem.op;
    if op.num_params() > 0 && !op.has_param_grad() {
        return Err(Error::Unsupported {
            capability: "param_inner_grad",
            kind: op.kind(),
        });
    }
    Ok(())
}

/// `−∇θ[⟨u₁, A v₁⟩ + ⟨u₂, A v₂⟩]`
fn param_term(op: &OpRef, (u1, v1): (&[f64], &[f64]), (u2, v2): (&[f64], &[f64])) -> Result<Vec<f64>> {
    if op.num_params() == 0 {
        return Ok(Vec::new());
    }
    let mut g = op.param_inner_grad(u1, v1)?;
    let g2 = op.param_inner_grad(u2, v2)?;
    for (a, b) in g.iter_mut().zip(g2) {
        *a = PARAM_TERM_SIGN * (*a + b);
    }
    Ok(g)
}

fn finish(bundle: GradientBundle) -> Result<GradientBundle> {
    check_finite("gradient wrt parameters", &bundle.grad_params)?;
    check_finite("gradient wrt rhs", &bundle.grad_b)?;
    check_finite("gradient wrt regularization", &[bundle.grad_lambda])?;
    Ok(bundle)
}

fn tall_impl(
    problem: &LstSqProblem,
    x: &[f64],
    cot: &Cotangent,
    cfg: &SolveConfig,
    counter: Option<&AtomicUsize>,
) -> Result<(GradientBundle, AdjointScratch)> {
    if problem.rows() < problem.cols() {
        return Err(Error::Validation(format!(
            "grad_tall needs rows ≥ cols, got {}×{}",
            problem.rows(),
            problem.cols()
        )));
    }
    check_inputs(problem, x, cot)?;
    let op = &problem.op;
    let lambda = problem.lambda;
    let mut inner = InnerSolver {
        cfg: cfg.tightened(INNER_TIGHTENING),
        count: 0,
        counter,
    };
    let adj: OpRef = Arc::new(Adjointed(op.clone()));
    let grad_b = inner.solve(adj, cot.grad_x.clone(), lambda, "adjoint: rhs gradient solve")?;
    let xi = inner.solve(op.clone(), grad_b.clone(), 0.0, "adjoint: auxiliary solve")?;

    let residual = sub(&op.apply_forward(x)?, &problem.b);
    let grad_params = param_term(op, (&residual, &xi), (&grad_b, x))?;
    let grad_lambda = LAMBDA_TERM_SIGN * 2.0 * lambda * dot(&xi, x);
    let bundle = finish(GradientBundle {
        grad_params,
        grad_b,
        grad_lambda,
        inner_solves: inner.count,
    })?;
    Ok((
        bundle,
        AdjointScratch {
            residual,
            xi: Some(xi),
            y: None,
        },
    ))
}

fn wide_impl(
    problem: &LstSqProblem,
    x: &[f64],
    cot: &Cotangent,
    cfg: &SolveConfig,
    counter: Option<&AtomicUsize>,
) -> Result<(GradientBundle, AdjointScratch)> {
    if problem.rows() > problem.cols() {
        return Err(Error::Validation(format!(
            "grad_wide needs rows ≤ cols, got {}×{}",
            problem.rows(),
            problem.cols()
        )));
    }
    check_inputs(problem, x, cot)?;
    let op = &problem.op;
    let lambda = problem.lambda;
    let mut inner = InnerSolver {
        cfg: cfg.tightened(INNER_TIGHTENING),
        count: 0,
        counter,
    };
    let adj: OpRef = Arc::new(Adjointed(op.clone()));
    let y = inner.solve(adj.clone(), x.to_vec(), 0.0, "adjoint: auxiliary solve")?;
    let grad_b = inner.solve(adj, cot.grad_x.clone(), lambda, "adjoint: rhs gradient solve")?;

    let residual = sub(&op.apply_adjoint(&grad_b)?, &cot.grad_x);
    let grad_params = param_term(op, (&grad_b, x), (&y, &residual))?;
    let grad_lambda = LAMBDA_TERM_SIGN * 2.0 * lambda * dot(&grad_b, &y);
    let bundle = finish(GradientBundle {
        grad_params,
        grad_b,
        grad_lambda,
        inner_solves: inner.count,
    })?;
    Ok((
        bundle,
        AdjointScratch {
            residual,
            xi: None,
            y: Some(y),
        },
    ))
}

/// Gradients for a tall (or square) problem. `x` must be the converged forward solution.
pub fn grad_tall(
    problem: &LstSqProblem,
    x: &[f64],
    cot: &Cotangent,
    cfg: &SolveConfig,
) -> Result<GradientBundle> {
    Ok(tall_impl(problem, x, cot, cfg, None)?.0)
}

/// [`grad_tall`] plus its intermediate vectors.
pub fn grad_tall_detailed(
    problem: &LstSqProblem,
    x: &[f64],
    cot: &Cotangent,
    cfg: &SolveConfig,
) -> Result<(GradientBundle, AdjointScratch)> {
    tall_impl(problem, x, cot, cfg, None)
}

/// Gradients for a wide (or square) problem. `x` must be the converged forward solution.
pub fn grad_wide(
    problem: &LstSqProblem,
    x: &[f64],
    cot: &Cotangent,
    cfg: &SolveConfig,
) -> Result<GradientBundle> {
    Ok(wide_impl(problem, x, cot, cfg, None)?.0)
}

/// [`grad_wide`] plus its intermediate vectors.
pub fn grad_wide_detailed(
    problem: &LstSqProblem,
    x: &[f64],
    cot: &Cotangent,
    cfg: &SolveConfig,
) -> Result<(GradientBundle, AdjointScratch)> {
    wide_impl(problem, x, cot, cfg, None)
}

/// Backward pass captured by [`vjp_lstsq`]. Reusable and shareable across threads.
#[derive(Debug)]
pub struct Pullback {
    problem: LstSqProblem,
    x: Vec<f64>,
    cfg: SolveConfig,
    solves: AtomicUsize,
}

impl Pullback {
    pub fn apply(&self, cot: &Cotangent) -> Result<GradientBundle> {
        let counter = Some(&self.solves);
        let out = match self.problem.mode() {
            Mode::Tall => tall_impl(&self.problem, &self.x, cot, &self.cfg, counter),
            Mode::Wide => wide_impl(&self.problem, &self.x, cot, &self.cfg, counter),
        };
        Ok(out?.0)
    }

    /// Total inner solves over every call to [`apply`](Self::apply) so far.
    pub fn inner_solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn problem(&self) -> &LstSqProblem {
        &self.problem
    }
}

/// Solves once and returns the report with a pullback for `x`.
pub fn vjp_lstsq(problem: &LstSqProblem, cfg: &SolveConfig) -> Result<(SolveReport, Pullback)> {
    let report = lstsq(problem, cfg)?.require_converged("forward solve")?;
    let pullback = Pullback {
        problem: problem.clone(),
        x: report.x.clone(),
        cfg: *cfg,
        solves: AtomicUsize::new(0),
    };
    Ok((report, pullback))
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::linop::{Convolution1D, Dense, Diagonal, LinearOperator};
    use crate::solvers::dense_lstsq;
    use crate::linop::to_dense;
    use crate::testkit::{fd_grad, seeded_normal, FdConfig};
    use crate::vecops::{max_abs_diff, rel_err, scaled};

    fn tight() -> SolveConfig {
        SolveConfig::with_tol(1e-12)
    }

    fn half_sq(x: &[f64]) -> f64 {
        0.5 * dot(x, x)
    }

    /// Gradient of `μ(LstSq(A(θ), b, λ))` by central differences on a dense oracle.
    fn fd_bundle(
        op: &OpRef,
        b: &[f64],
        lambda: f64,
        mu: &dyn Fn(&[f64]) -> f64,
    ) -> (Vec<f64>, Vec<f64>, f64) {
        let cfg = FdConfig::default();
        let theta = op.params();
        let solve = |o: &dyn LinearOperator, b: &[f64], l: f64| dense_lstsq(&to_dense(o), b, l);
        let gp = fd_grad(
            |t| Ok(mu(&solve(op.with_params(t)?.as_ref(), b, lambda)?)),
            &theta,
            &cfg,
        )
        .unwrap();
        let gb = fd_grad(|bb| Ok(mu(&solve(op.as_ref(), bb, lambda)?)), b, &cfg).unwrap();
        let gl = if lambda > 0.0 {
            fd_grad(|l| Ok(mu(&solve(op.as_ref(), b, l[0])?)), &[lambda], &cfg).unwrap()[0]
        } else {
            0.0
        };
        (gp, gb, gl)
    }

    fn scalar_rel(a: f64, b: f64) -> f64 {
        rel_err(&[a], &[b])
    }

    fn check_against_fd(op: OpRef, b: Vec<f64>, lambda: f64, tol: f64) {
        let problem = LstSqProblem::new(op.clone(), b.clone(), lambda).unwrap();
        let (report, pb) = vjp_lstsq(&problem, &tight()).unwrap();
        let bundle = pb.apply(&Cotangent::new(report.x.clone()).unwrap()).unwrap();
        let (gp, gb, gl) = fd_bundle(&op, &b, lambda, &half_sq);
        assert!(rel_err(&bundle.grad_params, &gp) < tol, "θ: {}", rel_err(&bundle.grad_params, &gp));
        assert!(rel_err(&bundle.grad_b, &gb) < tol, "b: {}", rel_err(&bundle.grad_b, &gb));
        assert!(scalar_rel(bundle.grad_lambda, gl) < tol, "λ: {} vs {gl}", bundle.grad_lambda);
        assert_eq!(bundle.inner_solves, 2);
    }

    #[test]
    fn scaled_identity_hand_values() {
        let op: OpRef = Arc::new(Diagonal::new(vec![2.0, 2.0]));
        // A(θ) = diag(θ₁, θ₂) at θ = (2, 2): the scalar θI case splits over coordinates.
        let problem = LstSqProblem::new(op, vec![2.0, 4.0], 0.0).unwrap();
        let x = lstsq(&problem, &tight()).unwrap().x;
        assert!(max_abs_diff(&x, &[1.0, 2.0]) < 1e-12);
        let g = grad_tall(&problem, &x, &Cotangent::new(x.clone()).unwrap(), &tight()).unwrap();
        assert!(max_abs_diff(&g.grad_b, &[0.5, 1.0]) < 1e-10);
        assert!((g.grad_params.iter().sum::<f64>() + 2.5).abs() < 1e-10);
        assert_eq!(g.grad_lambda, 0.0);
    }

    #[test]
    fn lambda_hand_value() {
        let op: OpRef = Arc::new(Dense::from_rows(&[vec![1.0]]).unwrap());
        let problem = LstSqProblem::new(op, vec![1.0], 1.0).unwrap();
        let x = lstsq(&problem, &tight()).unwrap().x;
        assert!((x[0] - 0.5).abs() < 1e-12);
        let g = grad_tall(&problem, &x, &Cotangent::new(x.clone()).unwrap(), &tight()).unwrap();
        assert!((g.grad_lambda + 0.25).abs() < 1e-10, "{}", g.grad_lambda);
    }

    #[test]
    fn wide_hand_values() {
        let op: OpRef = Arc::new(Dense::from_rows(&[vec![2.0, 0.0]]).unwrap());
        let problem = LstSqProblem::new(op, vec![1.0], 0.0).unwrap();
        let x = lstsq(&problem, &tight()).unwrap().x;
        assert!(max_abs_diff(&x, &[0.5, 0.0]) < 1e-12);
        let g = grad_wide(&problem, &x, &Cotangent::new(x.clone()).unwrap(), &tight()).unwrap();
        assert!((g.grad_b[0] - 0.25).abs() < 1e-10);
        // A(θ) = θ[1 0] only moves the first entry.
        assert!((g.grad_params[0] + 0.125).abs() < 1e-10, "{:?}", g.grad_params);
    }

    #[test]
    fn zero_cotangent_gives_zeros() {
        let op: OpRef = Arc::new(Dense::from_matrix(&DMatrix::from_fn(6, 3, |i, j| (i + 2 * j) as f64 + 1.0 / (1.0 + (i * j) as f64))).unwrap());
        let problem = LstSqProblem::new(op.clone(), seeded_normal(6, 1), 0.1).unwrap();
        let x = lstsq(&problem, &tight()).unwrap().x;
        let g = grad_tall(&problem, &x, &Cotangent::new(vec![0.0; 3]).unwrap(), &tight()).unwrap();
        assert!(g.grad_params.iter().chain(&g.grad_b).all(|v| *v == 0.0));
        assert_eq!(g.grad_lambda, 0.0);

        let wide = LstSqProblem::new(Arc::new(Adjointed(op)), seeded_normal(3, 2), 0.1).unwrap();
        let x = lstsq(&wide, &tight()).unwrap().x;
        let g = grad_wide(&wide, &x, &Cotangent::new(vec![0.0; 6]).unwrap(), &tight()).unwrap();
        assert!(g.grad_params.iter().chain(&g.grad_b).all(|v| *v == 0.0));
    }

    #[test]
    fn convolution_matches_fd() {
        for lambda in [0.0, 0.1] {
            let mut kernel = seeded_normal(5, 3);
            kernel[0] += 4.0;
            let op: OpRef = Arc::new(Convolution1D::new(kernel, 64).unwrap());
            check_against_fd(op, seeded_normal(64, 4), lambda, 1e-5);
        }
    }

    #[test]
    fn dense_tall_and_wide_match_fd() {
        for (seed, lambda) in [(1u64, 0.0), (2, 0.3), (3, 1.0)] {
            let a = crate::solvers::make_illconditioned(12, 5, 10.0, seed);
            let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
            check_against_fd(op, seeded_normal(12, seed + 10), lambda, 1e-5);
            let w = crate::solvers::make_illconditioned(8, 20, 10.0, seed);
            let op: OpRef = Arc::new(Dense::from_matrix(&w).unwrap());
            check_against_fd(op, seeded_normal(8, seed + 20), lambda, 1e-5);
        }
    }

    #[test]
    fn scratch_vectors_solve_their_identities() {
        let a = crate::solvers::make_illconditioned(9, 4, 5.0, 7);
        let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
        let lambda = 0.4;
        let b = seeded_normal(9, 1);
        let problem = LstSqProblem::new(op.clone(), b.clone(), lambda).unwrap();
        let x = lstsq(&problem, &tight()).unwrap().x;
        let g = seeded_normal(4, 2);
        let (_, s) = grad_tall_detailed(&problem, &x, &Cotangent::new(g.clone()).unwrap(), &tight()).unwrap();
        let m = a.transpose() * &a + DMatrix::identity(4, 4) * lambda * lambda;
        let xi = m.lu().solve(&DVector::from_vec(g)).unwrap();
        assert!(rel_err(s.xi.as_ref().unwrap(), xi.as_slice()) < 1e-9);

        let wa = a.transpose();
        let wop: OpRef = Arc::new(Dense::from_matrix(&wa).unwrap());
        let b = seeded_normal(4, 3);
        let problem = LstSqProblem::new(wop, b.clone(), lambda).unwrap();
        let x = lstsq(&problem, &tight()).unwrap().x;
        let (_, s) = grad_wide_detailed(&problem, &x, &Cotangent::new(seeded_normal(9, 4)).unwrap(), &tight()).unwrap();
        let n = &wa * wa.transpose() + DMatrix::identity(4, 4) * lambda * lambda;
        let y = n.lu().solve(&DVector::from_vec(b)).unwrap();
        assert!(rel_err(s.y.as_ref().unwrap(), y.as_slice()) < 1e-9);
    }

    #[test]
    fn pullback_is_linear_and_counts_solves() {
        let a = crate::solvers::make_illconditioned(10, 4, 5.0, 2);
        let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
        let problem = LstSqProblem::new(op, seeded_normal(10, 5), 0.1).unwrap();
        let (_, pb) = vjp_lstsq(&problem, &tight()).unwrap();
        let c = seeded_normal(4, 6);
        let g1 = pb.apply(&Cotangent::new(c.clone()).unwrap()).unwrap();
        let g2 = pb.apply(&Cotangent::new(scaled(2.0, &c)).unwrap()).unwrap();
        assert!(rel_err(&g2.grad_b, &scaled(2.0, &g1.grad_b)) < 1e-9);
        assert!(rel_err(&g2.grad_params, &scaled(2.0, &g1.grad_params)) < 1e-9);
        assert_eq!(pb.inner_solves(), 4);
    }

    #[test]
    fn identity_pullback_returns_x() {
        let op: OpRef = Arc::new(Diagonal::constant(vec![1.0; 3]));
        let problem = LstSqProblem::new(op, vec![1.0, -2.0, 0.5], 0.0).unwrap();
        let (r, pb) = vjp_lstsq(&problem, &tight()).unwrap();
        let g = pb.apply(&Cotangent::new(r.x.clone()).unwrap()).unwrap();
        assert!(max_abs_diff(&g.grad_b, &r.x) < 1e-12);
        assert!(g.grad_params.is_empty());
    }

    #[test]
    fn square_tall_and_wide_agree() {
        let a = crate::solvers::make_illconditioned(6, 6, 5.0, 9);
        let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
        let problem = LstSqProblem::new(op, seeded_normal(6, 1), 0.2).unwrap();
        let cfg = SolveConfig::with_tol(1e-10);
        let x = lstsq(&problem, &cfg).unwrap().x;
        let cot = Cotangent::new(seeded_normal(6, 2)).unwrap();
        let t = grad_tall(&problem, &x, &cot, &cfg).unwrap();
        let w = grad_wide(&problem, &x, &cot, &cfg).unwrap();
        assert!(rel_err(&t.grad_params, &w.grad_params) < 1e-7);
        assert!(rel_err(&t.grad_b, &w.grad_b) < 1e-7);
        assert!(scalar_rel(t.grad_lambda, w.grad_lambda) < 1e-7);
    }

    #[test]
    fn missing_param_grad_is_unsupported() {
        #[derive(Debug)]
        struct Opaque;
        impl LinearOperator for Opaque {
            fn rows(&self) -> usize {
                2
            }
            fn cols(&self) -> usize {
                2
            }
            fn kind(&self) -> crate::linop::OperatorKind {
                crate::linop::OperatorKind::Dense
            }
            fn params(&self) -> Vec<f64> {
                vec![1.0]
            }
            fn forward_into(&self, v: &[f64], out: &mut [f64]) {
                out.copy_from_slice(v)
            }
            fn adjoint_into(&self, u: &[f64], out: &mut [f64]) {
                out.copy_from_slice(u)
            }
        }
        let problem = LstSqProblem::new(Arc::new(Opaque), vec![1.0, 1.0], 0.0).unwrap();
        let err = grad_tall(&problem, &[1.0, 1.0], &Cotangent::new(vec![1.0, 1.0]).unwrap(), &tight());
        assert!(matches!(err, Err(Error::Unsupported { .. })));
    }

    #[test]
    fn forward_failure_blocks_pullback() {
        let a = crate::solvers::make_illconditioned(30, 10, 1e6, 1);
        let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
        let problem = LstSqProblem::new(op, seeded_normal(30, 99), 0.0).unwrap();
        let cfg = SolveConfig {
            max_iter: Some(2),
            ..SolveConfig::with_tol(1e-14)
        };
        let r = vjp_lstsq(&problem, &cfg);
        assert!(matches!(r, Err(Error::NotConverged { .. })), "{:?}", r.map(|x| x.0));
    }
}
