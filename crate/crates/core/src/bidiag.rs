//! Golub–Kahan bidiagonalization.
//!
//! Started from `b`, the recurrence produces
//!
//! ```text
//! β₁ u₁ = b,                 α₁ v₁ = Aᵀ u₁,
//! β_{k+1} u_{k+1} = A v_k − α_k u_k,
//! α_{k+1} v_{k+1} = Aᵀ u_{k+1} − β_{k+1} v_k,
//! ```
//!
//! so that `A V_k = U_{k+1} B_k` with `B_k` the `(k+1)×k` lower-bidiagonal
//! matrix holding `α₁..α_k` on the diagonal and `β₂..β_{k+1}` below it. Note
//! the start vector lands in `U e₁ = b/‖b‖`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::real::Real;
use crate::vecops::{axpy, norm_acc, scale};

/// Relative size below which a normalizer counts as zero.
pub const BREAKDOWN_RTOL: f64 = 1e-14;

/// State after `k` steps: the current Lanczos pair and normalizers.
#[derive(Debug, Clone)]
pub struct BidiagState<T: Real = f64> {
    pub k: usize,
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub alpha: f64,
    pub beta: f64,
    anorm_sq: f64,
    work_m: Vec<T>,
    work_n: Vec<T>,
}

impl<T: Real> BidiagState<T> {
    /// Running Frobenius norm of the bidiagonal computed so far, a lower
    /// bound on `‖A‖_F`.
    pub fn anorm_estimate(&self) -> f64 {
        self.anorm_sq.sqrt()
    }

    fn threshold(&self) -> f64 {
        BREAKDOWN_RTOL * self.anorm_estimate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakdownKind {
    /// `β_{k+1}` vanished: `A v_k` lies in the span of the left vectors.
    Beta,
    /// `α_{k}` vanished: the right Krylov space is exhausted.
    Alpha,
}

/// Result of one recurrence step. Breakdown is a normal termination signal:
/// the factorization is exact at that point.
#[derive(Debug, Clone)]
pub enum GkStep<T: Real = f64> {
    Next(BidiagState<T>),
    Breakdown {
        state: BidiagState<T>,
        kind: BreakdownKind,
    },
}

impl<T: Real> GkStep<T> {
    pub fn state(&self) -> &BidiagState<T> {
        match self {
            GkStep::Next(s) | GkStep::Breakdown { state: s, .. } => s,
        }
    }

    pub fn into_state(self) -> BidiagState<T> {
        match self {
            GkStep::Next(s) | GkStep::Breakdown { state: s, .. } => s,
        }
    }

    pub fn is_breakdown(&self) -> bool {
        matches!(self, GkStep::Breakdown { .. })
    }
}

fn normalize<T: Real>(x: &mut [T]) -> f64 {
    let nrm = norm_acc(x);
    if nrm > 0.0 {
        scale(T::from_f64(1.0 / nrm), x);
    }
    nrm
}

/// First step: `β₁ = ‖b‖`, `u₁ = b/β₁`, `α₁ = ‖Aᵀu₁‖`, `v₁ = Aᵀu₁/α₁`.
///
/// Without a norm estimate for `A` yet, `α₁` counts as vanished only when it
/// is exactly zero.
pub fn gk_init<T: Real>(op: &dyn LinearOperator, b: &[T]) -> Result<GkStep<T>> {
    crate::error::check_len("gk_init rhs", op.rows(), b.len())?;
    let mut u = b.to_vec();
    let beta = normalize(&mut u);
    if beta == 0.0 {
        return Err(Error::DegenerateStart);
    }
    if !beta.is_finite() {
        return Err(Error::NonFinite {
            context: "bidiagonalization start vector".into(),
            index: None,
        });
    }
    let mut v = vec![T::ZERO; op.cols()];
    T::adjoint(op, &u, &mut v);
    let alpha = normalize(&mut v);
    let state = BidiagState {
        k: 1,
        work_m: vec![T::ZERO; u.len()],
        work_n: vec![T::ZERO; v.len()],
        u,
        v,
        alpha,
        beta,
        anorm_sq: alpha * alpha,
    };
    if alpha == 0.0 {
        return Ok(GkStep::Breakdown {
            state,
            kind: BreakdownKind::Alpha,
        });
    }
    Ok(GkStep::Next(state))
}

/// Advances the recurrence by one step.
pub fn gk_step<T: Real>(op: &dyn LinearOperator, state: BidiagState<T>) -> GkStep<T> {
    advance(op, state, |_, _| {})
}

/// Like [`gk_step`], with `hook` applied to `u` and `v` before normalization.
pub fn gk_step_with<T: Real>(
    op: &dyn LinearOperator,
    state: BidiagState<T>,
    hook: impl FnMut(Side, &mut [T]),
) -> GkStep<T> {
    advance(op, state, hook)
}

/// Which vector an [`gk_step_with`] hook receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// One step; `hook` may modify each unnormalized vector (reorthogonalization).
fn advance<T: Real>(
    op: &dyn LinearOperator,
    mut s: BidiagState<T>,
    mut hook: impl FnMut(Side, &mut [T]),
) -> GkStep<T> {
    // β u ← A v − α u
    T::forward(op, &s.v, &mut s.work_m);
    scale(T::from_f64(-s.alpha), &mut s.u);
    axpy(T::from_f64(1.0), &s.work_m, &mut s.u);
    hook(Side::Left, &mut s.u);
    let beta = norm_acc(&s.u);
    s.k += 1;
    if beta <= s.threshold() {
        s.beta = 0.0;
        s.alpha = 0.0;
        s.u.fill(T::ZERO);
        return GkStep::Breakdown {
            state: s,
            kind: BreakdownKind::Beta,
        };
    }
    scale(T::from_f64(1.0 / beta), &mut s.u);
    s.beta = beta;
    s.anorm_sq += beta * beta;

    // α v ← Aᵀ u − β v
    T::adjoint(op, &s.u, &mut s.work_n);
    scale(T::from_f64(-beta), &mut s.v);
    axpy(T::from_f64(1.0), &s.work_n, &mut s.v);
    hook(Side::Right, &mut s.v);
    let alpha = norm_acc(&s.v);
    if alpha <= s.threshold() {
        s.alpha = 0.0;
        s.v.fill(T::ZERO);
        return GkStep::Breakdown {
            state: s,
            kind: BreakdownKind::Alpha,
        };
    }
    scale(T::from_f64(1.0 / alpha), &mut s.v);
    s.alpha = alpha;
    s.anorm_sq += alpha * alpha;
    GkStep::Next(s)
}

/// Explicit factors after `k` steps, `A V = U B`.
#[derive(Debug, Clone)]
pub struct BidiagFactors {
    /// `m × (k+1)`; the last column is zero when `β_{k+1}` vanished.
    pub u: DMatrix<f64>,
    /// `n × k`.
    pub v: DMatrix<f64>,
    /// `(k+1) × k` lower bidiagonal.
    pub b: DMatrix<f64>,
    pub alphas: Vec<f64>,
    /// `β₁..β_{k+1}`.
    pub betas: Vec<f64>,
    /// Number of columns actually produced; less than requested on breakdown.
    pub rank: usize,
    pub truncated: bool,
}

impl BidiagFactors {
    /// The square `k×k` leading block of `B`.
    pub fn square_b(&self) -> DMatrix<f64> {
        self.b.rows(0, self.rank).into_owned()
    }

    /// `‖b‖ · V · L⁻¹ e₁` with `L` the square leading block of `B`.
    ///
    /// For a full-row-rank wide operator factored to `k = m` steps this is
    /// the minimum-norm solution `Aᵀ(AAᵀ)⁻¹b`.
    pub fn min_norm_solution(&self) -> Result<DVector<f64>> {
        let k = self.rank;
        let l = self.square_b();
        let mut rhs = DVector::zeros(k);
        rhs[0] = self.betas[0];
        let y = l
            .solve_lower_triangular(&rhs)
            .ok_or_else(|| Error::Numerical("singular bidiagonal block".into()))?;
        Ok(&self.v * y)
    }
}

/// Runs `k` steps and accumulates explicit `U`, `V`, `B`. Intended for tests
/// and debugging at small `k`; `reorthogonalize` applies full two-pass
/// Gram–Schmidt to every new Lanczos vector.
pub fn gk_factor(
    op: &dyn LinearOperator,
    b: &[f64],
    k: usize,
    reorthogonalize: bool,
) -> Result<BidiagFactors> {
    let (m, n) = (op.rows(), op.cols());
    if k == 0 || k > m.min(n) {
        return Err(Error::Validation(format!(
            "factor rank {k} must be in 1..={}",
            m.min(n)
        )));
    }
    let mut us: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut alphas = Vec::with_capacity(k);
    let mut betas = Vec::with_capacity(k + 1);

    let first = gk_init(op, b)?;
    let mut truncated = first.is_breakdown();
    let mut state = first.into_state();
    us.push(state.u.clone());
    betas.push(state.beta);
    if !truncated {
        vs.push(state.v.clone());
        alphas.push(state.alpha);
    }

    while !truncated {
        let step = advance(op, state, |side, x| {
            if !reorthogonalize {
                return;
            }
            let basis = match side {
                Side::Left => &us,
                Side::Right => &vs,
            };
            for _ in 0..2 {
                for q in basis {
                    let c = crate::vecops::dot(q, x);
                    axpy(-c, q, x);
                }
            }
        });
        let broke = step.is_breakdown();
        state = step.into_state();
        // β_{k+1}, u_{k+1} are valid unless β itself vanished.
        us.push(state.u.clone());
        betas.push(state.beta);
        if vs.len() == k {
            break;
        }
        if broke {
            truncated = true;
            break;
        }
        vs.push(state.v.clone());
        alphas.push(state.alpha);
    }

    let rank = vs.len();
    let mut umat = DMatrix::zeros(m, rank + 1);
    for (j, col) in us.iter().take(rank + 1).enumerate() {
        umat.column_mut(j).copy_from_slice(col);
    }
    let mut vmat = DMatrix::zeros(n, rank);
    for (j, col) in vs.iter().enumerate() {
        vmat.column_mut(j).copy_from_slice(col);
    }
    let mut bmat = DMatrix::zeros(rank + 1, rank);
    for j in 0..rank {
        bmat[(j, j)] = alphas[j];
        if let Some(&beta) = betas.get(j + 1) {
            bmat[(j + 1, j)] = beta;
        }
    }
    betas.truncate(rank + 1);
    Ok(BidiagFactors {
        u: umat,
        v: vmat,
        b: bmat,
        alphas,
        betas,
        rank,
        truncated,
    })
}
