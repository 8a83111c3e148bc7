//! Random-Fourier-feature Gaussian process regression, calibrated either by
//! the type-II marginal likelihood or by the fit of the predictive mean.

mod features;

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use features::RffFeatures;

use crate::adjoint::{vjp_lstsq, Cotangent};
use crate::error::{check_len, Error, Result};
use crate::linop::LinearOperator;
use crate::nullspace::{Adam, UpdateRule};
use crate::solvers::{lsmr, LstSqProblem, SolveConfig};
use crate::testkit::{fd_grad, FdConfig};
use crate::vecops::{dot, norm, sub};

/// Ground-truth regression function.
pub fn f_true(x: f64) -> f64 {
    (2.0 * PI * x).cos() + x * (5.0 * PI * x).sin()
}

/// Observation noise standard deviation `base + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub base: f64,
    pub slope: f64,
}

impl NoiseProfile {
    pub const DEFAULT: Self = Self {
        base: 0.05,
        slope: 0.25,
    };
    pub const NONE: Self = Self {
        base: 0.0,
        slope: 0.0,
    };

    pub fn std_at(&self, x: f64) -> f64 {
        self.base + self.slope * x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub x_train: Vec<f64>,
    pub y_train: Vec<f64>,
    pub x_test: Vec<f64>,
    pub y_test: Vec<f64>,
    pub noise: NoiseProfile,
}

pub const N_TRAIN: usize = 1600;
pub const N_TEST: usize = 400;

pub fn make_dataset(seed: u64) -> SyntheticDataset {
    make_dataset_with(seed, NoiseProfile::DEFAULT)
}

/// Uniform inputs on [0, 1] with heteroscedastic Gaussian noise.
pub fn make_dataset_with(seed: u64, noise: NoiseProfile) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xda7a_5e7);
    let mut draw = |n: usize| {
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ys = xs
            .iter()
            .map(|&x| {
                let e: f64 = StandardNormal.sample(&mut rng);
                f_true(x) + noise.std_at(x) * e
            })
            .collect();
        (xs, ys)
    };
    let (x_train, y_train) = draw(N_TRAIN);
    let (x_test, y_test) = draw(N_TEST);
    SyntheticDataset {
        x_train,
        y_train,
        x_test,
        y_test,
        noise,
    }
}

/// Positive hyperparameters (σ, ℓ, λ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub sigma: f64,
    pub ell: f64,
    pub lambda: f64,
}

impl Hyper {
    fn to_log(self) -> [f64; 3] {
        [self.sigma.ln(), self.ell.ln(), self.lambda.ln()]
    }

    fn from_log(t: &[f64]) -> Self {
        Self {
            sigma: t[0].exp(),
            ell: t[1].exp(),
            lambda: t[2].exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        if [self.sigma, self.ell, self.lambda].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Validation(format!("hyperparameters must be positive: {self:?}")))
        }
    }
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            ell: 0.5,
            lambda: 1.0,
        }
    }
}

/// An RFF regression model. Frequencies and phases are drawn once and then frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffModel {
    dim: usize,
    /// `k×d` row-major, drawn at unit lengthscale.
    omega: Vec<f64>,
    phases: Vec<f64>,
    pub hyper: Hyper,
    pub z_star: Option<Vec<f64>>,
}

pub const DEFAULT_FEATURES: usize = 200;

impl RffModel {
    pub fn new(features: usize, dim: usize, hyper: Hyper, seed: u64) -> Result<Self> {
        if features == 0 || dim == 0 {
            return Err(Error::Validation("need at least one feature and one input dimension".into()));
        }
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = (0..features * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let phases = (0..features).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Ok(Self {
            dim,
            omega,
            phases,
            hyper,
            z_star: None,
        })
    }

    pub fn features(&self) -> usize {
        self.phases.len()
    }

    pub fn with_hyper(&self, hyper: Hyper) -> Self {
        Self {
            hyper,
            z_star: None,
            ..self.clone()
        }
    }

    /// Φ at inputs `x` (row-major `m×d`).
    pub fn operator(&self, x: &[f64]) -> Result<RffFeatures> {
        RffFeatures::new(x, self.dim, &self.omega, &self.phases, self.hyper.sigma, self.hyper.ell)
    }

    /// Predictive mean `Φ(x) z⋆`.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self
            .z_star
            .as_ref()
            .ok_or_else(|| Error::Validation("model has not been fitted".into()))?;
        self.operator(x)?.apply_forward(z)
    }
}

/// Tolerance of the weight solve.
pub const FIT_TOL: f64 = 1e-5;

/// Features of one-dimensional inputs are close to collinear, so the condition
/// limit is lifted far above the solver default.
pub const FIT_CONLIM: f64 = 1e14;

pub fn fit_config() -> SolveConfig {
    SolveConfig {
        conlim: FIT_CONLIM,
        ..SolveConfig::with_tol(FIT_TOL)
    }
}

/// [`fit_config`] with both stopping tolerances set to `tol`.
pub fn tight_config(tol: f64) -> SolveConfig {
    SolveConfig {
        atol: tol,
        btol: tol,
        ..fit_config()
    }
}

/// `z⋆ = argmin ‖Φz − y‖² + λ²‖z‖²`.
pub fn gp_fit(model: &RffModel, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    gp_fit_with(model, x, y, &fit_config())
}

pub fn gp_fit_with(model: &RffModel, x: &[f64], y: &[f64], cfg: &SolveConfig) -> Result<Vec<f64>> {
    let op = Arc::new(model.operator(x)?);
    let problem = LstSqProblem::new(op, y.to_vec(), model.hyper.lambda)?;
    Ok(lsmr(&problem, cfg)?.require_converged("gp_fit")?.x)
}

/// Form of the weight penalty in the predictive-fit loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightPenalty {
    /// `λ²‖z⋆‖`
    #[default]
    Norm,
    /// `λ²‖z⋆‖²`
    SquaredNorm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredConfig {
    pub solver: SolveConfig,
    pub penalty: WeightPenalty,
}

impl Default for PredConfig {
    fn default() -> Self {
        Self {
            solver: fit_config(),
            penalty: WeightPenalty::Norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredLoss {
    pub value: f64,
    /// Gradient with respect to (σ, ℓ, λ).
    pub grad: [f64; 3],
    pub z_star: Vec<f64>,
    pub inner_solves: usize,
}

/// `L = ‖Φz⋆ − y‖² + λ²‖z⋆‖` and its gradient through the differentiable solve.
pub fn loss_pred(model: &RffModel, x: &[f64], y: &[f64], cfg: &PredConfig) -> Result<PredLoss> {
    let op = Arc::new(model.operator(x)?);
    let lambda = model.hyper.lambda;
    let problem = LstSqProblem::new(op.clone(), y.to_vec(), lambda)?;
    let (report, pullback) = vjp_lstsq(&problem, &cfg.solver)?;
    let z = report.x;
    let resid = sub(&op.apply_forward(&z)?, y);
    let znorm = norm(&z);
    let l2 = lambda * lambda;

    // Partial derivatives of the outer expression with z held fixed.
    let mut grad_z = op.apply_adjoint(&resid)?;
    grad_z.iter_mut().for_each(|g| *g *= 2.0);
    let (penalty, d_lambda) = match cfg.penalty {
        WeightPenalty::Norm => {
            if znorm > 0.0 {
                grad_z.iter_mut().zip(&z).for_each(|(g, zi)| *g += l2 * zi / znorm);
            }
            (l2 * znorm, 2.0 * lambda * znorm)
        }
        WeightPenalty::SquaredNorm => {
            grad_z.iter_mut().zip(&z).for_each(|(g, zi)| *g += 2.0 * l2 * zi);
            (l2 * znorm * znorm, 2.0 * lambda * znorm * znorm)
        }
    };
    let twice_resid: Vec<f64> = resid.iter().map(|r| 2.0 * r).collect();
    let direct = op.param_inner_grad(&twice_resid, &z)?;

    let implicit = pullback.apply(&Cotangent::new(grad_z)?)?;
    Ok(PredLoss {
        value: dot(&resid, &resid) + penalty,
        grad: [
            direct[0] + implicit.grad_params[0],
            direct[1] + implicit.grad_params[1],
            d_lambda + implicit.grad_lambda,
        ],
        z_star: z,
        inner_solves: implicit.inner_solves,
    })
}

/// Negative log marginal likelihood `−log N(y | 0, ΦΦᵀ + λ²I)` through the
/// `k×k` system `ΦᵀΦ + λ²I`.
pub fn loss_lml(model: &RffModel, x: &[f64], y: &[f64]) -> Result<f64> {
    let op = model.operator(x)?;
    check_len("loss_lml targets", op.rows(), y.len())?;
    let (m, k) = (op.rows() as f64, op.cols() as f64);
    let phi = op.matrix();
    let l2 = model.hyper.lambda.powi(2);
    let mut gram = phi.transpose() * &phi;
    for i in 0..gram.nrows() {
        gram[(i, i)] += l2;
    }
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "ΦᵀΦ + λ²I is not positive definite (λ = {:.3e}, k = {k})",
            model.hyper.lambda
        ))
    })?;
    let yv = DVector::from_column_slice(y);
    let t = phi.tr_mul(&yv);
    let quad = (yv.norm_squared() - t.dot(&chol.solve(&t))) / l2;
    let logdet_k: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let logdet = (m - k) * l2.ln() + logdet_k;
    Ok(0.5 * quad + 0.5 * logdet + 0.5 * m * (2.0 * PI).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lml,
    Pred,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Lml => "lml",
            Method::Pred => "pred",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lml" => Ok(Method::Lml),
            "pred" => Ok(Method::Pred),
            _ => Err(Error::Parse(format!("unknown calibration method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSettings {
    pub steps: usize,
    pub lr: f64,
    pub features: usize,
    pub init: Hyper,
    pub pred: PredConfig,
    /// Step on log-parameters for the finite-difference LML gradient.
    pub lml_fd: FdConfig,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 1e-2,
            features: DEFAULT_FEATURES,
            init: Hyper::default(),
            pred: PredConfig::default(),
            lml_fd: FdConfig { h0: 1e-5 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: Method,
    pub seed: u64,
    pub hyper: Hyper,
    pub trace: Vec<f64>,
    pub test_rmse: f64,
    pub wall_ms: f64,
    #[serde(skip)]
    pub model: Option<RffModel>,
}

impl CalibrationResult {
    /// `(x, y, predictive mean)` on the test inputs, sorted by x.
    pub fn plot_data(&self, data: &SyntheticDataset) -> Result<Vec<(f64, f64, f64)>> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Validation("calibration result carries no model".into()))?;
        let mean = model.predict(&data.x_test)?;
        let mut rows: Vec<_> = data
            .x_test
            .iter()
            .zip(&data.y_test)
            .zip(mean)
            .map(|((&x, &y), m)| (x, y, m))
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(rows)
    }
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Optimizes log(σ, ℓ, λ) with Adam and reports the test RMSE of the final fit.
pub fn calibrate(
    method: Method,
    data: &SyntheticDataset,
    settings: &CalibrationSettings,
    seed: u64,
) -> Result<CalibrationResult> {
    let start = Instant::now();
    let base = RffModel::new(settings.features, 1, settings.init, seed)?;
    let (x, y) = (&data.x_train, &data.y_train);
    let mut theta = settings.init.to_log().to_vec();
    let mut adam = Adam::new(settings.lr);
    let mut trace = Vec::with_capacity(settings.steps);

    let lml_at = |t: &[f64]| loss_lml(&base.with_hyper(Hyper::from_log(t)), x, y);
    for step in 0..settings.steps {
        let hyper = Hyper::from_log(&theta);
        let (value, grad_log) = match method {
            Method::Pred => {
                let loss = loss_pred(&base.with_hyper(hyper), x, y, &settings.pred)?;
                let g = [
                    loss.grad[0] * hyper.sigma,
                    loss.grad[1] * hyper.ell,
                    loss.grad[2] * hyper.lambda,
                ];
                (loss.value, g.to_vec())
            }
            Method::Lml => (lml_at(&theta)?, fd_grad(lml_at, &theta, &settings.lml_fd)?),
        };
        trace.push(value);
        if !value.is_finite() || grad_log.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, trace });
        }
        adam.update(&mut theta, &grad_log);
    }

    let hyper = Hyper::from_log(&theta);
    let mut model = base.with_hyper(hyper);
    model.z_star = Some(gp_fit(&model, x, y)?);
    let test_rmse = rmse(&model.predict(&data.x_test)?, &data.y_test);
    Ok(CalibrationResult {
        method,
        seed,
        hyper,
        trace,
        test_rmse,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        model: Some(model),
    })
}

/// Dense reference for `loss_lml` through the full `m×m` covariance. Test scale only.
pub fn loss_lml_dense(phi: &DMatrix<f64>, lambda: f64, y: &[f64]) -> Result<f64> {
    let m = phi.nrows();
    let cov = phi * phi.transpose() + DMatrix::identity(m, m) * (lambda * lambda);
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("dense covariance is not positive definite".into()))?;
    let yv = DVector::from_column_slice(y);
    let quad = yv.dot(&chol.solve(&yv));
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(0.5 * quad + 0.5 * logdet + 0.5 * m as f64 * (2.0 * PI).ln())
}
