use crate::error::Result;
use crate::real::Real;
use crate::vecops::{axpy, dot_acc, norm_acc};

use super::{LstSqProblem, Mode, Precision, SolveConfig, SolveReport, StopReason};

/// Conjugate gradients on the normal equations.
///
/// Tall problems iterate on `(AᵀA + λ²I)x = Aᵀb`. Wide problems iterate on
/// `(AAᵀ + λ²I)y = b` and return `x = Aᵀy`, which for `λ = 0` is the
/// minimum-norm solution. Both square the condition number, which is the
/// point of comparison against [`lsmr`](super::lsmr).
///
/// No condition estimate is available, so `conlim` is not enforced;
/// `cond_est` is the spread of observed Rayleigh quotients.
pub fn cgls(problem: &LstSqProblem, cfg: &SolveConfig) -> Result<SolveReport> {
    cfg.validate()?;
    match (cfg.precision, problem.mode()) {
        (Precision::Double, Mode::Tall) => tall::<f64>(problem, cfg),
        (Precision::Single, Mode::Tall) => tall::<f32>(problem, cfg),
        (Precision::Double, Mode::Wide) => wide::<f64>(problem, cfg),
        (Precision::Single, Mode::Wide) => wide::<f32>(problem, cfg),
    }
}

fn cast<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}

fn uncast<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64()).collect()
}

struct Spectrum {
    max: f64,
    min: f64,
}

impl Spectrum {
    fn new() -> Self {
        Self {
            max: 0.0,
            min: f64::INFINITY,
        }
    }

    fn observe(&mut self, ratio: f64) {
        if ratio.is_finite() && ratio > 0.0 {
            self.max = self.max.max(ratio);
            self.min = self.min.min(ratio);
        }
    }

    fn cond(&self) -> f64 {
        if self.min.is_finite() && self.min > 0.0 {
            self.max / self.min
        } else {
            1.0
        }
    }
}

fn tall<T: Real>(problem: &LstSqProblem, cfg: &SolveConfig) -> Result<SolveReport> {
    let op = problem.op.as_ref();
    let (m, n) = (op.rows(), op.cols());
    let lam2 = problem.lambda * problem.lambda;
    let b: Vec<T> = cast(&problem.b);
    let normb = norm_acc(&b);
    if normb == 0.0 {
        return Ok(SolveReport::zero(n));
    }
    let max_iter = cfg.iteration_cap(m, n);

    let mut x = vec![T::ZERO; n];
    let mut r = b.clone();
    let mut s = vec![T::ZERO; n];
    T::adjoint(op, &r, &mut s);
    let mut p = s.clone();
    let mut q = vec![T::ZERO; m];
    let mut gamma = dot_acc(&s, &s);
    let mut spectrum = Spectrum::new();
    let mut history = Vec::new();

    let mut itn = 0;
    let mut stop = StopReason::MaxIter;
    let (mut normr, mut norms) = (normb, gamma.sqrt());
    if gamma == 0.0 {
        stop = StopReason::ExactBreakdown;
    }
    while stop == StopReason::MaxIter && itn < max_iter {
        itn += 1;
        T::forward(op, &p, &mut q);
        let pp = dot_acc(&p, &p);
        let qq = dot_acc(&q, &q);
        spectrum.observe((qq / pp).sqrt());
        let delta = qq + lam2 * pp;
        if delta == 0.0 {
            stop = StopReason::ExactBreakdown;
            break;
        }
        let a = gamma / delta;
        axpy(T::from_f64(a), &p, &mut x);
        axpy(T::from_f64(-a), &q, &mut r);
        T::adjoint(op, &r, &mut s);
        axpy(T::from_f64(-lam2), &x, &mut s);
        let gamma_new = dot_acc(&s, &s);

        let normx = norm_acc(&x);
        normr = (dot_acc(&r, &r) + lam2 * normx * normx).sqrt();
        norms = gamma_new.sqrt();
        history.push(norms);
        let norm_a = (spectrum.max.powi(2) + lam2).sqrt();
        if normr <= cfg.btol * normb + cfg.atol * norm_a * normx
            || norms <= cfg.atol * norm_a * normr
        {
            stop = StopReason::Converged;
            break;
        }
        if gamma_new == 0.0 {
            stop = StopReason::ExactBreakdown;
            break;
        }
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = *si + T::from_f64(beta) * *pi;
        }
    }

    Ok(SolveReport {
        x: uncast(&x),
        iterations: itn,
        resid_norm: normr,
        normal_resid_norm: norms,
        anorm_est: (spectrum.max.powi(2) + lam2).sqrt(),
        cond_est: spectrum.cond(),
        stop_reason: stop,
        normal_resid_history: history,
    })
}

fn wide<T: Real>(problem: &LstSqProblem, cfg: &SolveConfig) -> Result<SolveReport> {
    let op = problem.op.as_ref();
    let (m, n) = (op.rows(), op.cols());
    let lam2 = problem.lambda * problem.lambda;
    let b: Vec<T> = cast(&problem.b);
    let normb = norm_acc(&b);
    if normb == 0.0 {
        return Ok(SolveReport::zero(n));
    }
    let max_iter = cfg.iteration_cap(m, n);

    // Only x = Aᵀy is tracked; the system residual is b − Ax − λ²y.
    let mut x = vec![T::ZERO; n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut atp = vec![T::ZERO; n];
    let mut ax = vec![T::ZERO; m];
    let mut gamma = dot_acc(&r, &r);
    let mut spectrum = Spectrum::new();
    let mut history = Vec::new();

    let mut itn = 0;
    let mut stop = StopReason::MaxIter;
    while itn < max_iter {
        itn += 1;
        T::adjoint(op, &p, &mut atp);
        let pp = dot_acc(&p, &p);
        let qq = dot_acc(&atp, &atp);
        spectrum.observe((qq / pp).sqrt());
        let delta = qq + lam2 * pp;
        if delta == 0.0 {
            stop = StopReason::ExactBreakdown;
            break;
        }
        let a = gamma / delta;
        axpy(T::from_f64(a), &atp, &mut x);
        T::forward(op, &atp, &mut ax);
        for i in 0..m {
            r[i] = r[i] - T::from_f64(a) * (ax[i] + T::from_f64(lam2) * p[i]);
        }
        let gamma_new = dot_acc(&r, &r);
        let normr = gamma_new.sqrt();
        history.push(normr);
        let norm_a = (spectrum.max.powi(2) + lam2).sqrt();
        if normr <= cfg.btol * normb + cfg.atol * norm_a * norm_acc(&x) {
            stop = StopReason::Converged;
            break;
        }
        if gamma_new == 0.0 {
            stop = StopReason::ExactBreakdown;
            break;
        }
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = *ri + T::from_f64(beta) * *pi;
        }
    }

    // Explicit residuals at the returned point.
    let xf = uncast(&x);
    let axf = op.apply_forward(&xf)?;
    let res: Vec<f64> = axf.iter().zip(&problem.b).map(|(p, q)| p - q).collect();
    let normx = crate::vecops::norm(&xf);
    let resid_norm = (crate::vecops::dot(&res, &res) + lam2 * normx * normx).sqrt();
    let mut g = op.apply_adjoint(&res)?;
    axpy(lam2, &xf, &mut g);

    Ok(SolveReport {
        x: xf,
        iterations: itn,
        resid_norm,
        normal_resid_norm: crate::vecops::norm(&g),
        anorm_est: (spectrum.max.powi(2) + lam2).sqrt(),
        cond_est: spectrum.cond(),
        stop_reason: stop,
        normal_resid_history: history,
    })
}
