use std::collections::VecDeque;

use crate::bidiag::{gk_init, gk_step_with, GkStep, Side};
use crate::error::Result;
use crate::real::Real;
use crate::vecops::{axpy, dot, norm_acc, scale};

use super::{LstSqProblem, Precision, SolveConfig, SolveReport, StopReason};

/// Stable Givens rotation: returns `(c, s, r)` with `[c s; -s c]ᵀ [a; b] = [r; 0]`.
pub(crate) fn sym_ortho(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        let c = if a == 0.0 { 1.0 } else { a.signum() };
        (c, 0.0, a.abs())
    } else if a == 0.0 {
        (0.0, b.signum(), b.abs())
    } else if b.abs() > a.abs() {
        let tau = a / b;
        let s = b.signum() / (1.0 + tau * tau).sqrt();
        (s * tau, s, b / s)
    } else {
        let tau = b / a;
        let c = a.signum() / (1.0 + tau * tau).sqrt();
        (c, c * tau, a / c)
    }
}

/// LSMR for `min ‖Ax − b‖² + λ²‖x‖²`.
///
/// For a wide operator with `λ = 0` the iterates stay in the row space of
/// `A`, so the limit is the minimum-norm solution. Regularization is folded
/// into the rotations rather than stacking `[A; λI]`, keeping memory at
/// `O(m + n)`.
///
/// With `reorth_window > 0` each new right vector is reorthogonalized
/// (two Gram–Schmidt passes, in `f64`) against that many predecessors, which
/// restores convergence lost to rounding on ill-conditioned problems.
///
/// In single precision the vectors and operator products are `f32` while the
/// bidiagonal scalars and rotations stay in `f64`.
pub fn lsmr(problem: &LstSqProblem, cfg: &SolveConfig) -> Result<SolveReport> {
    cfg.validate()?;
    match cfg.precision {
        Precision::Double => run::<f64>(problem, cfg),
        Precision::Single => run::<f32>(problem, cfg),
    }
}

fn run<T: Real>(problem: &LstSqProblem, cfg: &SolveConfig) -> Result<SolveReport> {
    let op = problem.op.as_ref();
    let (m, n) = (op.rows(), op.cols());
    let damp = problem.lambda;
    let max_iter = cfg.iteration_cap(m, n);
    let b: Vec<T> = problem.b.iter().map(|&x| T::from_f64(x)).collect();
    let normb = norm_acc(&b);
    if normb == 0.0 {
        return Ok(SolveReport::zero(n));
    }

    let first = gk_init(op, &b)?;
    let mut broke = first.is_breakdown();
    let mut state = first.into_state();
    let (mut alpha, beta0) = (state.alpha, state.beta);

    let mut x = vec![T::ZERO; n];
    let mut report = SolveReport::zero(n);
    report.resid_norm = beta0;
    report.normal_resid_norm = alpha * beta0;
    report.anorm_est = alpha;
    if alpha * beta0 == 0.0 {
        // Aᵀb = 0: x = 0 is already optimal.
        report.stop_reason = StopReason::ExactBreakdown;
        return Ok(report);
    }

    let mut zetabar = alpha * beta0;
    let mut alphabar = alpha;
    let mut rho = 1.0;
    let mut rhobar = 1.0;
    let mut cbar = 1.0;
    let mut sbar = 0.0;

    let mut h = state.v.clone();
    let mut hbar = vec![T::ZERO; n];

    // ‖r‖ estimation
    let mut betadd = beta0;
    let mut betad = 0.0;
    let mut rhodold = 1.0;
    let mut tautildeold = 0.0;
    let mut thetatilde = 0.0;
    let mut zeta = 0.0;
    let mut d = 0.0;

    // ‖A‖ and cond(A) estimation
    let mut norm_a2 = alpha * alpha;
    let mut maxrbar: f64 = 0.0;
    let mut minrbar: f64 = 1e100;
    let ctol = 1.0 / cfg.conlim;

    let window = cfg.reorth_window;
    let mut basis: VecDeque<Vec<f64>> = VecDeque::with_capacity(window.min(n));
    if window > 0 {
        basis.push_back(state.v.iter().map(|v| v.to_f64()).collect());
    }

    let mut itn = 0;
    let mut stop = StopReason::MaxIter;
    while itn < max_iter {
        itn += 1;

        let step = gk_step_with(op, state, |side, vec| {
            if side == Side::Right && !basis.is_empty() {
                reorthogonalize(&basis, vec);
            }
        });
        broke = broke || step.is_breakdown();
        state = match step {
            GkStep::Next(s) => s,
            GkStep::Breakdown { state, .. } => state,
        };
        let beta = state.beta;
        alpha = state.alpha;
        if window > 0 && alpha > 0.0 {
            if basis.len() == window {
                basis.pop_front();
            }
            basis.push_back(state.v.iter().map(|v| v.to_f64()).collect());
        }

        // Rotation Q̂ folding in the damping.
        let (chat, shat, alphahat) = sym_ortho(alphabar, damp);

        // Q_i turns B_i into R_i.
        let rhoold = rho;
        let (c, s, rho_new) = sym_ortho(alphahat, beta);
        rho = rho_new;
        let thetanew = s * alpha;
        alphabar = c * alpha;

        // Q̄_i turns R_iᵀ into R̄_i.
        let rhobarold = rhobar;
        let zetaold = zeta;
        let thetabar = sbar * rho;
        let rhotemp = cbar * rho;
        let (cb, sb, rb) = sym_ortho(cbar * rho, thetanew);
        cbar = cb;
        sbar = sb;
        rhobar = rb;
        zeta = cbar * zetabar;
        zetabar = -sbar * zetabar;

        // h̄, x, h updates
        scale(T::from_f64(-(thetabar * rho / (rhoold * rhobarold))), &mut hbar);
        axpy(T::from_f64(1.0), &h, &mut hbar);
        axpy(T::from_f64(zeta / (rho * rhobar)), &hbar, &mut x);
        scale(T::from_f64(-(thetanew / rho)), &mut h);
        axpy(T::from_f64(1.0), &state.v, &mut h);

        // ‖r‖ estimate
        let betaacute = chat * betadd;
        let betacheck = -shat * betadd;
        let betahat = c * betaacute;
        betadd = -s * betaacute;

        let thetatildeold = thetatilde;
        let (ctildeold, stildeold, rhotildeold) = sym_ortho(rhodold, thetabar);
        thetatilde = stildeold * rhobar;
        rhodold = ctildeold * rhobar;
        betad = -stildeold * betad + ctildeold * betahat;

        tautildeold = (zetaold - thetatildeold * tautildeold) / rhotildeold;
        let taud = (zeta - thetatilde * tautildeold) / rhodold;
        d += betacheck * betacheck;
        let normr = (d + (betad - taud).powi(2) + betadd * betadd).sqrt();

        norm_a2 += beta * beta;
        let norm_a = norm_a2.sqrt();
        norm_a2 += alpha * alpha;

        maxrbar = maxrbar.max(rhobarold);
        if itn > 1 {
            minrbar = minrbar.min(rhobarold);
        }
        let cond_a = maxrbar.max(rhotemp) / minrbar.min(rhotemp);

        let normar = zetabar.abs();
        let normx = norm_acc(&x);
        report.normal_resid_history.push(normar);

        let test1 = normr / normb;
        let test2 = if norm_a * normr != 0.0 {
            normar / (norm_a * normr)
        } else {
            f64::INFINITY
        };
        let test3 = 1.0 / cond_a;
        let t1 = test1 / (1.0 + norm_a * normx / normb);
        let rtol = cfg.btol + cfg.atol * norm_a * normx / normb;

        report.resid_norm = normr;
        report.normal_resid_norm = normar;
        report.anorm_est = norm_a;
        report.cond_est = cond_a;

        let converged = test1 <= rtol || test2 <= cfg.atol || 1.0 + t1 <= 1.0 || 1.0 + test2 <= 1.0;
        if converged {
            stop = StopReason::Converged;
            break;
        }
        if test3 <= ctol || 1.0 + test3 <= 1.0 {
            stop = StopReason::ConLimExceeded;
            break;
        }
        if broke {
            stop = StopReason::ExactBreakdown;
            break;
        }
    }

    report.x = x.iter().map(|v| v.to_f64()).collect();
    report.iterations = itn;
    report.stop_reason = stop;
    Ok(report)
}

fn reorthogonalize<T: Real>(basis: &VecDeque<Vec<f64>>, v: &mut [T]) {
    let mut w: Vec<f64> = v.iter().map(|x| x.to_f64()).collect();
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, &w);
            axpy(-c, q, &mut w);
        }
    }
    for (dst, src) in v.iter_mut().zip(w) {
        *dst = T::from_f64(src);
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::linop::{Dense, Diagonal, OpRef};
    use crate::solvers::{dense_lstsq, make_illconditioned};
    use crate::testkit::seeded_normal;
    use crate::vecops::{norm, rel_err};

    fn solve(op: OpRef, b: Vec<f64>, lambda: f64, cfg: &SolveConfig) -> SolveReport {
        lsmr(&LstSqProblem::new(op, b, lambda).unwrap(), cfg).unwrap()
    }

    fn tight() -> SolveConfig {
        SolveConfig::with_tol(1e-12)
    }

    #[test]
    fn sym_ortho_zeroes_second_component() {
        for (a, b) in [(3.0, 4.0), (-1.0, 2.0), (0.0, -5.0), (2.0, 0.0), (-2.0, 0.0)] {
            let (c, s, r) = sym_ortho(a, b);
            assert!((c * a + s * b - r).abs() < 1e-14);
            assert!((-s * a + c * b).abs() < 1e-14);
            assert!((c * c + s * s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_problems() {
        let id: OpRef = Arc::new(Diagonal::identity(3));
        let r = solve(id.clone(), vec![1.0, 2.0, 3.0], 0.0, &tight());
        assert!(rel_err(&r.x, &[1.0, 2.0, 3.0]) < 1e-12);
        let r = solve(id, vec![1.0, 2.0, 3.0], 1.0, &tight());
        assert!(rel_err(&r.x, &[0.5, 1.0, 1.5]) < 1e-12);
    }

    #[test]
    fn column_of_ones_gives_mean() {
        let a: OpRef = Arc::new(Dense::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        let r = solve(a, vec![0.0, 2.0], 0.0, &tight());
        assert!((r.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wide_min_norm() {
        let a: OpRef = Arc::new(Dense::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let r = solve(a, vec![2.0], 0.0, &tight());
        assert!(rel_err(&r.x, &[2.0, 0.0]) < 1e-12);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let a: OpRef = Arc::new(Diagonal::identity(4));
        let r = solve(a, vec![0.0; 4], 0.3, &SolveConfig::default());
        assert_eq!(r.x, vec![0.0; 4]);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.stop_reason, StopReason::Converged);
    }

    #[test]
    fn random_tall_matches_dense_oracle() {
        for (seed, lambda) in [(1u64, 0.0), (2, 0.1)] {
            let a = make_illconditioned(20, 8, 1e3, seed);
            let b = seeded_normal(20, seed + 100);
            let oracle = dense_lstsq(&a, &b, lambda).unwrap();
            let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
            let r = solve(op, b, lambda, &SolveConfig::with_tol(1e-14));
            assert!(rel_err(&r.x, &oracle) < 1e-8, "seed {seed}: {}", rel_err(&r.x, &oracle));
        }
    }

    #[test]
    fn normal_residual_estimate_never_increases() {
        let a = make_illconditioned(60, 20, 1e4, 7);
        let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
        let r = solve(op, seeded_normal(60, 8), 0.05, &SolveConfig::with_tol(1e-12));
        for w in r.normal_resid_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn converged_tall_satisfies_optimality() {
        let a = make_illconditioned(30, 10, 1e2, 3);
        let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
        let b = seeded_normal(30, 4);
        let cfg = SolveConfig::default();
        for lambda in [0.0, 0.3] {
            let r = solve(op.clone(), b.clone(), lambda, &cfg);
            assert_eq!(r.stop_reason, StopReason::Converged);
            let ax = op.apply_forward(&r.x).unwrap();
            let res: Vec<f64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
            let mut g = op.apply_adjoint(&res).unwrap();
            axpy(lambda * lambda, &r.x, &mut g);
            let bound = 10.0 * cfg.atol * (r.anorm_est.powi(2) + lambda * lambda) * norm(&r.x);
            assert!(norm(&g) <= bound, "{} > {bound}", norm(&g));
        }
    }

    #[test]
    fn iteration_cap_respected() {
        let a = make_illconditioned(50, 30, 1e6, 9);
        let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
        let cfg = SolveConfig {
            max_iter: Some(3),
            ..SolveConfig::with_tol(1e-15)
        };
        let r = solve(op, seeded_normal(50, 1), 0.0, &cfg);
        assert_eq!(r.iterations, 3);
        assert_eq!(r.stop_reason, StopReason::MaxIter);
    }

    #[test]
    fn tiny_conlim_trips() {
        let a = make_illconditioned(40, 20, 1e6, 2);
        let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
        let cfg = SolveConfig {
            conlim: 10.0,
            ..SolveConfig::with_tol(1e-15)
        };
        let r = solve(op, seeded_normal(40, 5), 0.0, &cfg);
        assert_eq!(r.stop_reason, StopReason::ConLimExceeded);
    }

    #[test]
    fn deterministic() {
        let a = make_illconditioned(25, 10, 50.0, 4);
        let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
        let b = seeded_normal(25, 6);
        let r1 = solve(op.clone(), b.clone(), 0.2, &SolveConfig::default());
        let r2 = solve(op, b, 0.2, &SolveConfig::default());
        assert_eq!(r1.x, r2.x);
        assert_eq!(r1.iterations, r2.iterations);
    }

    #[test]
    fn single_precision_runs() {
        let a = make_illconditioned(40, 10, 10.0, 1);
        let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
        let b = seeded_normal(40, 2);
        let oracle = dense_lstsq(&a, &b, 0.0).unwrap();
        let cfg = SolveConfig {
            precision: Precision::Single,
            ..SolveConfig::default()
        };
        let r = solve(op, b, 0.0, &cfg);
        assert!(rel_err(&r.x, &oracle) < 1e-4);
    }

    #[test]
    fn reorthogonalization_agrees_with_plain_run() {
        let a = make_illconditioned(40, 12, 1e3, 5);
        let op: OpRef = Arc::new(Dense::from_matrix(&a).unwrap());
        let b = seeded_normal(40, 9);
        let oracle = dense_lstsq(&a, &b, 0.1).unwrap();
        let cfg = SolveConfig {
            reorth_window: 12,
            ..SolveConfig::with_tol(1e-13)
        };
        let r = solve(op, b, 0.1, &cfg);
        assert!(rel_err(&r.x, &oracle) < 1e-9);
        assert!(r.iterations <= 14, "{}", r.iterations);
    }

    #[test]
    fn identity_is_exact_in_one_step() {
        let id: OpRef = Arc::new(Diagonal::identity(5));
        let r = solve(id.clone(), seeded_normal(5, 3), 0.0, &tight());
        assert_eq!(r.iterations, 1);
        assert_eq!(id.cols(), r.x.len());
    }
}
