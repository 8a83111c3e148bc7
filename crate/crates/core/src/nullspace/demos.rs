//! Small constrained problems driven by the null-space method.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{kkt_report, nsm_step, AffineConstraint, ConstraintSpec, NullSpaceConfig, SphereConstraint};
use crate::error::{Error, Result};
use crate::solvers::{dense_lstsq, SolveConfig};
use crate::vecops::{axpy, max_abs_diff, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoCase {
    Sphere,
    Sparsity,
    Commutant,
}

impl std::str::FromStr for DemoCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(DemoCase::Sphere),
            "sparsity" => Ok(DemoCase::Sparsity),
            "commutant" => Ok(DemoCase::Commutant),
            _ => Err(Error::Parse(format!("unknown demo case {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub eta: f64,
    pub gamma: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            gamma: 0.5,
            steps: 500,
            seed: 0,
        }
    }
}

impl DemoConfig {
    fn nsm(&self) -> NullSpaceConfig {
        NullSpaceConfig {
            eta: self.eta,
            gamma: self.gamma,
            solver: SolveConfig::with_tol(1e-12),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub primal_residual: f64,
    pub stationarity_residual: f64,
}

/// A comparison run that ignores or softens the constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub name: String,
    pub final_loss: f64,
    pub final_primal_residual: f64,
    pub final_theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub case: DemoCase,
    pub config: DemoConfig,
    pub trajectory: Vec<StepRecord>,
    pub final_theta: Vec<f64>,
    /// Closed-form constrained optimum, where one exists.
    pub oracle: Option<Vec<f64>>,
    /// Max-abs distance between `final_theta` and `oracle`.
    pub oracle_error: Option<f64>,
    pub baselines: Vec<BaselineRun>,
}

impl DemoReport {
    pub fn final_record(&self) -> &StepRecord {
        self.trajectory.last().expect("trajectory holds the initial state")
    }
}

/// Runs the null-space method for `steps` iterations with gradient descent at rate `η`.
fn run<F>(
    theta0: Vec<f64>,
    spec: &Arc<dyn ConstraintSpec>,
    cfg: &DemoConfig,
    mut loss_grad: F,
) -> Result<(Vec<f64>, Vec<StepRecord>)>
where
    F: FnMut(usize, &[f64]) -> (f64, Vec<f64>),
{
    let nsm = cfg.nsm();
    let mut theta = theta0;
    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let (loss, grad) = loss_grad(step, &theta);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("demo loss at step {step}"),
                index: None,
            });
        }
        let kkt = kkt_report(&theta, &grad, spec, &nsm.solver)?;
        trajectory.push(StepRecord {
            step,
            loss,
            primal_residual: kkt.primal_residual,
            stationarity_residual: kkt.stationarity_residual,
        });
        if step == cfg.steps {
            break;
        }
        let delta = nsm_step(&theta, &grad, spec, &nsm)?;
        axpy(1.0, &delta, &mut theta);
    }
    Ok((theta, trajectory))
}

pub const SPHERE_TARGET: [f64; 2] = [1.2, 1.6];
pub const PENALTY_WEIGHT: f64 = 10.0;

/// `min ‖θ − a‖²` subject to `‖θ‖² = 1`, with an unconstrained and a penalty baseline.
pub fn sphere_demo(cfg: &DemoConfig) -> Result<DemoReport> {
    let a = SPHERE_TARGET;
    let spec: Arc<dyn ConstraintSpec> = Arc::new(SphereConstraint { dim: 2 });
    let loss_grad = |theta: &[f64]| {
        let diff = [theta[0] - a[0], theta[1] - a[1]];
        (norm(&diff).powi(2), vec![2.0 * diff[0], 2.0 * diff[1]])
    };
    let theta0 = crate::testkit::seeded_normal(2, cfg.seed);
    let (theta, trajectory) = run(theta0.clone(), &spec, cfg, |_, t| loss_grad(t))?;
    let na = norm(&a);
    let oracle = vec![a[0] / na, a[1] / na];

    let constraint = |t: &[f64]| spec.value(t)[0];
    let mut plain = theta0.clone();
    for _ in 0..cfg.steps {
        let (_, g) = loss_grad(&plain);
        axpy(-cfg.eta, &g, &mut plain);
    }
    // The penalty objective is stiff, so it gets a smaller rate and more steps.
    let mut pen = theta0;
    let pen_lr = 0.01;
    for _ in 0..cfg.steps.max(1) * 20 {
        let (_, mut g) = loss_grad(&pen);
        let c = constraint(&pen);
        axpy(4.0 * PENALTY_WEIGHT * c, &pen.clone(), &mut g);
        axpy(-pen_lr, &g, &mut pen);
    }
    let baselines = vec![
        BaselineRun {
            name: "gradient-descent".into(),
            final_loss: loss_grad(&plain).0,
            final_primal_residual: constraint(&plain).abs(),
            final_theta: plain,
        },
        BaselineRun {
            name: format!("penalty-{PENALTY_WEIGHT}"),
            final_loss: loss_grad(&pen).0,
            final_primal_residual: constraint(&pen).abs(),
            final_theta: pen,
        },
    ];
    Ok(DemoReport {
        case: DemoCase::Sphere,
        config: *cfg,
        trajectory,
        oracle_error: Some(max_abs_diff(&theta, &oracle)),
        final_theta: theta,
        oracle: Some(oracle),
        baselines,
    })
}

/// 90° rotation.
fn rotation() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

/// Linear constraint `W R − R W = 0` for the 90° rotation `R`, on `θ = vec(W)`
/// in row-major order. Only the first row is kept: the second row repeats it
/// up to sign, and keeping both would make the Jacobian rank deficient.
pub fn commutant_constraint() -> AffineConstraint {
    let r = rotation();
    let mut matrix = DMatrix::zeros(2, 4);
    for p in 0..4 {
        let mut e = Matrix2::zeros();
        e[(p / 2, p % 2)] = 1.0;
        let d = e * r - r * e;
        matrix[(0, p)] = d[(0, 0)];
        matrix[(1, p)] = d[(0, 1)];
    }
    AffineConstraint {
        matrix,
        offset: vec![0.0, 0.0],
    }
}

/// Fits `f(x) = Wx` on rotation-augmented data under the C4 commutant
/// constraint; the oracle is the group average of the unconstrained fit.
pub fn commutant_demo(cfg: &DemoConfig) -> Result<DemoReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = rotation();
    let w_true = Matrix2::from_fn(|_, _| StandardNormal.sample(&mut rng));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..32 {
        let x0 = nalgebra::Vector2::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let mut x = x0;
        for _ in 0..4 {
            let noise = nalgebra::Vector2::from_fn(|_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.1 * z
            });
            ys.push(w_true * x + noise);
            xs.push(x);
            x = r * x;
        }
    }
    let n = xs.len() as f64;
    let loss_grad = |theta: &[f64]| {
        let w = Matrix2::new(theta[0], theta[1], theta[2], theta[3]);
        let mut loss = 0.0;
        let mut g = Matrix2::zeros();
        for (x, y) in xs.iter().zip(&ys) {
            let e = w * x - y;
            loss += e.norm_squared();
            g += 2.0 * e * x.transpose();
        }
        (loss / n, vec![g[(0, 0)] / n, g[(0, 1)] / n, g[(1, 0)] / n, g[(1, 1)] / n])
    };

    // Unconstrained least-squares fit, one output row at a time.
    let design = DMatrix::from_fn(xs.len(), 2, |i, j| xs[i][j]);
    let mut w0 = Matrix2::zeros();
    for row in 0..2 {
        let target: Vec<f64> = ys.iter().map(|y| y[row]).collect();
        let sol = dense_lstsq(&design, &target, 0.0)?;
        w0[(row, 0)] = sol[0];
        w0[(row, 1)] = sol[1];
    }
    let mut avg = Matrix2::zeros();
    let mut rp = Matrix2::identity();
    for _ in 0..4 {
        avg += rp.transpose() * w0 * rp;
        rp = r * rp;
    }
    avg /= 4.0;
    let oracle = vec![avg[(0, 0)], avg[(0, 1)], avg[(1, 0)], avg[(1, 1)]];

    let spec: Arc<dyn ConstraintSpec> = Arc::new(commutant_constraint());
    let theta0: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
    let (theta, trajectory) = run(theta0, &spec, cfg, |_, t| loss_grad(t))?;
    Ok(DemoReport {
        case: DemoCase::Commutant,
        config: *cfg,
        trajectory,
        oracle_error: Some(max_abs_diff(&theta, &oracle)),
        final_theta: theta,
        oracle: Some(oracle),
        baselines: Vec::new(),
    })
}

const HIDDEN: usize = 16;
const N_W1: usize = 2 * HIDDEN;
const N_W2: usize = HIDDEN;
const N_WEIGHTS: usize = N_W1 + HIDDEN + N_W2 + 1;
const N_LOGITS: usize = N_W1 + N_W2;
/// Target fraction of active weights.
pub const SPARSITY_TARGET: f64 = 0.5;
const BATCH: usize = 32;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `c(θ) = mean(sigmoid(mask logits)) − s`, ignoring the network weights.
#[derive(Debug, Clone, Copy)]
pub struct ExpectedDensity {
    pub offset: usize,
    pub count: usize,
    pub dim: usize,
    pub target: f64,
}

impl ConstraintSpec for ExpectedDensity {
    fn dim_theta(&self) -> usize {
        self.dim
    }
    fn dim_constraint(&self) -> usize {
        1
    }
    fn value(&self, theta: &[f64]) -> Vec<f64> {
        let logits = &theta[self.offset..self.offset + self.count];
        vec![logits.iter().map(|&p| sigmoid(p)).sum::<f64>() / self.count as f64 - self.target]
    }
    fn jvp(&self, theta: &[f64], v: &[f64]) -> Vec<f64> {
        let r = self.offset..self.offset + self.count;
        let s: f64 = theta[r.clone()]
            .iter()
            .zip(&v[r])
            .map(|(&p, &x)| sigmoid(p) * (1.0 - sigmoid(p)) * x)
            .sum();
        vec![s / self.count as f64]
    }
    fn tjvp(&self, theta: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for i in self.offset..self.offset + self.count {
            let s = sigmoid(theta[i]);
            out[i] = s * (1.0 - s) * u[0] / self.count as f64;
        }
        out
    }
}

/// Loss and straight-through gradient of a masked 2–16–1 tanh network on one batch.
///
/// Layout of θ: `W1 (16×2) | b1 (16) | W2 (16) | b2 | logits(W1) | logits(W2)`.
fn masked_mlp(theta: &[f64], mask: &[f64], xs: &[[f64; 2]], ys: &[f64]) -> (f64, Vec<f64>) {
    let (w1, rest) = theta.split_at(N_W1);
    let (b1, rest) = rest.split_at(HIDDEN);
    let (w2, rest) = rest.split_at(N_W2);
    let b2 = rest[0];
    let (m1, m2) = mask.split_at(N_W1);
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    let scale = 1.0 / xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys) {
        let mut h = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            let pre = w1[2 * j] * m1[2 * j] * x[0] + w1[2 * j + 1] * m1[2 * j + 1] * x[1] + b1[j];
            h[j] = pre.tanh();
        }
        let out: f64 = (0..HIDDEN).map(|j| w2[j] * m2[j] * h[j]).sum::<f64>() + b2;
        let e = out - y;
        loss += e * e * scale;
        let d_out = 2.0 * e * scale;
        grad[N_W1 + HIDDEN + N_W2] += d_out;
        for j in 0..HIDDEN {
            // ∂/∂W2 and ∂/∂m2
            grad[N_W1 + HIDDEN + j] += d_out * m2[j] * h[j];
            grad[N_WEIGHTS + N_W1 + j] += d_out * w2[j] * h[j];
            let d_pre = d_out * w2[j] * m2[j] * (1.0 - h[j] * h[j]);
            grad[N_W1 + j] += d_pre;
            for (k, &xk) in x.iter().enumerate() {
                let idx = 2 * j + k;
                grad[idx] += d_pre * m1[idx] * xk;
                grad[N_WEIGHTS + idx] += d_pre * w1[idx] * xk;
            }
        }
    }
    // Straight-through: the sampled mask is treated as its mean sigmoid(p).
    for i in 0..N_LOGITS {
        let s = sigmoid(theta[N_WEIGHTS + i]);
        grad[N_WEIGHTS + i] *= s * (1.0 - s);
    }
    (loss, grad)
}

/// Regression with a stochastically masked network under an expected-density constraint.
pub fn sparsity_demo(cfg: &DemoConfig) -> Result<DemoReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data: Vec<[f64; 2]> = (0..256)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let targets: Vec<f64> = data
        .iter()
        .map(|x| (std::f64::consts::PI * x[0]).sin() * 0.5 + x[1] * x[1])
        .collect();

    let dim = N_WEIGHTS + N_LOGITS;
    let mut theta0 = vec![0.0; dim];
    for (i, t) in theta0.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *t = if i < N_W1 {
            z / 2f64.sqrt()
        } else if i < N_W1 + HIDDEN {
            0.0
        } else if i < N_W1 + HIDDEN + N_W2 {
            z / (HIDDEN as f64).sqrt()
        } else if i < N_WEIGHTS {
            0.0
        } else {
            2.0 + 0.5 * z
        };
    }
    let spec: Arc<dyn ConstraintSpec> = Arc::new(ExpectedDensity {
        offset: N_WEIGHTS,
        count: N_LOGITS,
        dim,
        target: SPARSITY_TARGET,
    });

    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let (theta, trajectory) = run(theta0, &spec, cfg, |_, theta| {
        let idx: Vec<usize> = (0..BATCH).map(|_| batch_rng.random_range(0..data.len())).collect();
        let xs: Vec<[f64; 2]> = idx.iter().map(|&i| data[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
        let mask: Vec<f64> = theta[N_WEIGHTS..]
            .iter()
            .map(|&p| if batch_rng.random::<f64>() < sigmoid(p) { 1.0 } else { 0.0 })
            .collect();
        masked_mlp(theta, &mask, &xs, &ys)
    })?;
    Ok(DemoReport {
        case: DemoCase::Sparsity,
        config: *cfg,
        trajectory,
        final_theta: theta,
        oracle: None,
        oracle_error: None,
        baselines: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{fd_grad, seeded_normal, FdConfig};
    use crate::vecops::rel_err;

    #[test]
    fn sphere_converges_and_baselines_do_not() {
        let r = sphere_demo(&DemoConfig::default()).unwrap();
        let last = r.final_record();
        assert!(last.primal_residual <= 1e-6);
        assert!(last.stationarity_residual <= 1e-4);
        assert!(r.oracle_error.unwrap() <= 1e-4);
        let pen = &r.baselines[1];
        assert!(pen.final_primal_residual > 1e-3);
        // Closed-form penalty optimum along a: 2(t − 2) + 40t(t² − 1) = 0.
        let t = norm(&pen.final_theta);
        assert!((2.0 * (t - 2.0) + 4.0 * PENALTY_WEIGHT * t * (t * t - 1.0)).abs() < 1e-6);
        assert!((r.baselines[0].final_primal_residual - 3.0).abs() < 1e-6);
    }

    #[test]
    fn commutant_reaches_group_average() {
        let r = commutant_demo(&DemoConfig::default()).unwrap();
        assert!(r.oracle_error.unwrap() <= 1e-4, "{:?}", r.oracle_error);
        assert!(r.final_record().primal_residual < 1e-8);
    }

    #[test]
    fn commutant_constraint_matches_definition() {
        let spec = commutant_constraint();
        let w = [1.0, 2.0, 3.0, 4.0];
        let m = Matrix2::new(w[0], w[1], w[2], w[3]);
        let d = m * rotation() - rotation() * m;
        assert_eq!(spec.value(&w), vec![d[(0, 0)], d[(0, 1)]]);
        assert_eq!(d[(1, 0)], d[(0, 1)]);
        assert_eq!(d[(1, 1)], -d[(0, 0)]);
    }

    #[test]
    fn sparsity_constraint_satisfied() {
        let r = sparsity_demo(&DemoConfig::default()).unwrap();
        assert!(r.final_record().primal_residual <= 1e-3, "{}", r.final_record().primal_residual);
        assert!(r.trajectory[0].primal_residual > 0.1);
    }

    #[test]
    fn masked_mlp_gradient_matches_fd_for_fixed_mask() {
        let dim = N_WEIGHTS + N_LOGITS;
        let theta = seeded_normal(dim, 3);
        let mask: Vec<f64> = (0..N_LOGITS).map(|i| ((i * 7) % 3 != 0) as u8 as f64).collect();
        let xs = [[0.3, -0.5], [-0.9, 0.1], [0.2, 0.8]];
        let ys = [0.1, -0.4, 0.7];
        let (_, g) = masked_mlp(&theta, &mask, &xs, &ys);
        let wrapped = |w: &[f64]| {
            let mut t = theta.clone();
            t[..N_WEIGHTS].copy_from_slice(w);
            Ok(masked_mlp(&t, &mask, &xs, &ys).0)
        };
        let fd = fd_grad(wrapped, &theta[..N_WEIGHTS], &FdConfig::default()).unwrap();
        assert!(rel_err(&g[..N_WEIGHTS], &fd) < 1e-6);
    }

    #[test]
    fn density_constraint_jacobian_consistent() {
        let spec = ExpectedDensity {
            offset: 2,
            count: 3,
            dim: 5,
            target: 0.5,
        };
        let theta = [9.0, 9.0, 0.3, -1.0, 2.0];
        let v = [1.0, 1.0, 0.5, -0.2, 0.7];
        let fd = fd_grad(
            |t| Ok(spec.value(&theta.iter().zip(&v).map(|(a, b)| a + t[0] * b).collect::<Vec<_>>())[0]),
            &[0.0],
            &FdConfig::default(),
        )
        .unwrap();
        assert!(rel_err(&fd, &spec.jvp(&theta, &v)) < 1e-7);
        let u = [0.7];
        let lhs = spec.jvp(&theta, &v)[0] * u[0];
        let rhs: f64 = spec.tjvp(&theta, &u).iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-15);
    }
}
