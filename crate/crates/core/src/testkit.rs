//! Independent oracles and seeded generators for tests.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linop::{to_dense, Dense, OpRef};
use crate::solvers::{dense_lstsq, make_illconditioned, LstSqProblem};
use crate::vecops::dot;

/// Standard normal draws. The stream for `seed` is independent of the one
/// [`make_illconditioned`] uses for the same seed.
pub fn seeded_normal(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    DMatrix::from_vec(rows, cols, seeded_normal(rows * cols, seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    /// Coordinate `i` uses step `h0·(1 + |θ_i|)`.
    pub h0: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { h0: 1e-6 }
    }
}

/// Central-difference gradient of `f` at `theta`.
pub fn fd_grad<F>(f: F, theta: &[f64], cfg: &FdConfig) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    fd_grad_paired(|up, down| Ok(f(up)? - f(down)?), theta, cfg)
}

/// Central differences where `diff(θ + heᵢ, θ − heᵢ)` returns `f(θ + heᵢ) − f(θ − heᵢ)`,
/// letting callers evaluate the difference without cancellation.
pub fn fd_grad_paired<D>(diff: D, theta: &[f64], cfg: &FdConfig) -> Result<Vec<f64>>
where
    D: Fn(&[f64], &[f64]) -> Result<f64>,
{
    if !(cfg.h0 > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {}", cfg.h0)));
    }
    let mut up = theta.to_vec();
    let mut down = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let h = cfg.h0 * (1.0 + theta[i].abs());
        up[i] = theta[i] + h;
        down[i] = theta[i] - h;
        let d = diff(&up, &down)?;
        up[i] = theta[i];
        down[i] = theta[i];
        if !d.is_finite() {
            return Err(Error::NonFinite {
                context: "finite-difference evaluation".into(),
                index: Some(i),
            });
        }
        grad.push(d / (2.0 * h));
    }
    Ok(grad)
}

/// Applies the Moore–Penrose pseudo-inverse of a full-rank dense matrix.
pub fn dense_pinv_apply(mat: &DMatrix<f64>, v: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = mat.shape();
    if v.len() != m {
        return Err(Error::Shape {
            context: "dense_pinv_apply",
            expected: m,
            actual: v.len(),
        });
    }
    let rhs = DVector::from_column_slice(v);
    let singular = || Error::RankDeficient {
        rank: 0,
        dim: m.min(n),
    };
    let full_rank = |r: &DMatrix<f64>| {
        let k = r.nrows().min(r.ncols());
        let d: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
        let top = d.iter().cloned().fold(0.0, f64::max);
        top > 0.0 && d.iter().all(|&x| x > 1e3 * f64::EPSILON * top)
    };
    if m >= n {
        let qr = mat.clone().qr();
        let r = qr.r();
        if !full_rank(&r) {
            return Err(singular());
        }
        let x = r.solve_upper_triangular(&qr.q().tr_mul(&rhs)).ok_or_else(singular)?;
        Ok(x.as_slice().to_vec())
    } else {
        let qr = mat.transpose().qr();
        let r = qr.r();
        if !full_rank(&r) {
            return Err(singular());
        }
        let z = r.transpose().solve_lower_triangular(&rhs).ok_or_else(singular)?;
        Ok((qr.q() * z).as_slice().to_vec())
    }
}

/// A seeded ill-conditioned problem with its dense mirror.
pub fn random_problem(
    m: usize,
    n: usize,
    cond: f64,
    lambda: f64,
    seed: u64,
) -> (LstSqProblem, DMatrix<f64>) {
    let a = make_illconditioned(m, n, cond, seed);
    let op: OpRef = Arc::new(Dense::from_matrix(&a).expect("generated matrix is finite"));
    let b = seeded_normal(m, seed.wrapping_add(0x5eed));
    let problem = LstSqProblem::new(op, b, lambda).expect("generated problem is valid");
    (problem, a)
}

/// Finite-difference gradients of `μ(x)` with `x = LstSq(A(θ), b, λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FdSolveGradients {
    pub grad_params: Vec<f64>,
    pub grad_b: Vec<f64>,
    pub grad_lambda: f64,
}

/// Dense QR forward map for [`fd_solve_gradients`].
pub fn dense_solve(op: &OpRef, b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    dense_lstsq(&to_dense(op.as_ref()), b, lambda)
}

/// A scalar function of a least-squares solution.
pub trait SolutionObjective {
    fn value(&self, x: &[f64]) -> f64;

    /// `value(up) − value(down)`; override with a cancellation-free form where one exists.
    fn difference(&self, up: &[f64], down: &[f64]) -> f64 {
        self.value(up) - self.value(down)
    }
}

/// `μ(x) = ⟨g, x⟩`.
#[derive(Debug, Clone, Copy)]
pub struct LinearObjective<'a>(pub &'a [f64]);

impl SolutionObjective for LinearObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        dot(self.0, x)
    }

    fn difference(&self, up: &[f64], down: &[f64]) -> f64 {
        up.iter().zip(down).zip(self.0).map(|((u, d), g)| (u - d) * g).sum()
    }
}

/// Central differences of `μ(x) = ⟨g, x⟩` through `solve`.
pub fn fd_solve_gradients<S>(
    op: &OpRef,
    b: &[f64],
    lambda: f64,
    grad_x: &[f64],
    solve: S,
    cfg: &FdConfig,
) -> Result<FdSolveGradients>
where
    S: Fn(&OpRef, &[f64], f64) -> Result<Vec<f64>>,
{
    fd_objective_gradients(op, b, lambda, &LinearObjective(grad_x), solve, cfg)
}

/// Central differences of `μ` composed with the solve. The solution depends on
/// λ only through λ², so the λ-derivative at λ = 0 is exactly zero.
pub fn fd_objective_gradients<M, S>(
    op: &OpRef,
    b: &[f64],
    lambda: f64,
    mu: &M,
    solve: S,
    cfg: &FdConfig,
) -> Result<FdSolveGradients>
where
    M: SolutionObjective + ?Sized,
    S: Fn(&OpRef, &[f64], f64) -> Result<Vec<f64>>,
{
    let grad_params = fd_grad_paired(
        |up, down| {
            let xu = solve(&op.with_params(up)?, b, lambda)?;
            let xd = solve(&op.with_params(down)?, b, lambda)?;
            Ok(mu.difference(&xu, &xd))
        },
        &op.params(),
        cfg,
    )?;
    let grad_b = fd_grad_paired(
        |up, down| Ok(mu.difference(&solve(op, up, lambda)?, &solve(op, down, lambda)?)),
        b,
        cfg,
    )?;
    let grad_lambda = if lambda > 0.0 {
        fd_grad_paired(
            |up, down| Ok(mu.difference(&solve(op, b, up[0])?, &solve(op, b, down[0])?)),
            &[lambda],
            cfg,
        )?[0]
    } else {
        0.0
    };
    Ok(FdSolveGradients {
        grad_params,
        grad_b,
        grad_lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{lsmr, SolveConfig};
    use crate::vecops::{max_abs_diff, rel_err};

    #[test]
    fn fd_exact_on_linear_and_quadratic() {
        let c = [1.5, -2.0, 0.25];
        let theta = [0.3, -1.2, 4.0];
        let g = fd_grad(|t| Ok(t.iter().zip(&c).map(|(a, b)| a * b).sum()), &theta, &FdConfig::default()).unwrap();
        assert!(max_abs_diff(&g, &c) < 1e-9);
        let g = fd_grad(|t| Ok(0.5 * t.iter().map(|a| a * a).sum::<f64>()), &theta, &FdConfig::default()).unwrap();
        assert!(max_abs_diff(&g, &theta) < 1e-9);
    }

    #[test]
    fn fd_sine() {
        let g = fd_grad(|t| Ok(t[0].sin()), &[0.3], &FdConfig::default()).unwrap();
        assert!((g[0] - 0.3f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn fd_reports_bad_coordinate() {
        let err = fd_grad(
            |t| Ok(if t[1] > 1.0 { f64::NAN } else { t[0] }),
            &[0.0, 1.0],
            &FdConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: Some(1), .. }));
        assert!(fd_grad(|_| Ok(0.0), &[0.0], &FdConfig { h0: 0.0 }).is_err());
    }

    #[test]
    fn pinv_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let v = [1.0, -1.0];
        let expect = a.clone().try_inverse().unwrap() * DVector::from_column_slice(&v);
        assert!(rel_err(&dense_pinv_apply(&a, &v).unwrap(), expect.as_slice()) < 1e-14);

        let wide = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(rel_err(&dense_pinv_apply(&wide, &[3.0]).unwrap(), &[3.0, 0.0]) < 1e-15);

        let r = seeded_matrix(6, 10, 4);
        let v = seeded_normal(6, 5);
        let back = &r * DVector::from_vec(dense_pinv_apply(&r, &v).unwrap());
        assert!(max_abs_diff(back.as_slice(), &v) < 1e-10);

        let low = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(dense_pinv_apply(&low, &v[..2]).is_err());
    }

    #[test]
    fn isometry_converges_immediately() {
        let (p, _) = random_problem(40, 10, 1.0, 0.0, 3);
        let r = lsmr(&p, &SolveConfig::with_tol(1e-10)).unwrap();
        assert!(r.iterations <= 2, "{}", r.iterations);
    }

    #[test]
    fn mirror_agrees_and_is_deterministic() {
        let (p, a) = random_problem(15, 6, 10.0, 0.1, 8);
        let v = seeded_normal(6, 1);
        let dense = &a * DVector::from_column_slice(&v);
        assert!(max_abs_diff(&p.op.apply_forward(&v).unwrap(), dense.as_slice()) < 1e-12);
        let (q, b) = random_problem(15, 6, 10.0, 0.1, 8);
        assert_eq!(a, b);
        assert_eq!(p.b, q.b);
    }

    #[test]
    fn solve_gradients_of_scaled_identity() {
        // x = 2b / (4 + λ²) for A = 2I.
        let op: OpRef = Arc::new(crate::linop::Diagonal::new(vec![2.0, 2.0]));
        let (b, g, lambda) = ([1.0, -3.0], [0.5, 2.0], 0.7);
        let fd = fd_solve_gradients(&op, &b, lambda, &g, dense_solve, &FdConfig::default()).unwrap();
        let d = 4.0 + lambda * lambda;
        assert!(max_abs_diff(&fd.grad_b, &[2.0 * g[0] / d, 2.0 * g[1] / d]) < 1e-8);
        let gb = dot(&g, &b);
        // ∂x/∂a_i for A = diag(a): (b_i(λ² − a²)) / (a² + λ²)².
        let dparam = b[0] * g[0] * (lambda * lambda - 4.0) / (d * d);
        assert!((fd.grad_params[0] - dparam).abs() < 1e-8);
        assert!((fd.grad_lambda - (-4.0 * lambda * gb / (d * d))).abs() < 1e-8);
    }

    #[test]
    fn objective_gradients_of_scaled_identity() {
        // μ = ½‖x‖² = 2‖b‖²/d² with d = 4 + λ².
        let op: OpRef = Arc::new(crate::linop::Diagonal::new(vec![2.0, 2.0]));
        let (b, lambda) = ([1.0, -3.0], 0.7);
        struct HalfSq;
        impl SolutionObjective for HalfSq {
            fn value(&self, x: &[f64]) -> f64 {
                0.5 * dot(x, x)
            }
        }
        let fd = fd_objective_gradients(&op, &b, lambda, &HalfSq, dense_solve, &FdConfig::default()).unwrap();
        let d = 4.0 + lambda * lambda;
        assert!(max_abs_diff(&fd.grad_b, &[4.0 * b[0] / (d * d), 4.0 * b[1] / (d * d)]) < 1e-8);
        let bb = dot(&b, &b);
        assert!((fd.grad_lambda - (-8.0 * lambda * bb / (d * d * d))).abs() < 1e-8);
    }
}
