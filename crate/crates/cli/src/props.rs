//! Property suites shared by `check` and the acceptance tests. Each suite is
//! parameterized by its instance count so `check` can run a light version.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsqdiff::adjoint::{grad_tall, grad_wide, Cotangent, GradientBundle};
use lsqdiff::gp::{self, Method, RffFeatures};
use lsqdiff::linop::{dot_test, Composed, Convolution1D, Dense, Diagonal, Stacked};
use lsqdiff::nullspace::{
    commutant_demo, project_tangent, sparsity_demo, sphere_demo, weighted_to_standard, AffineConstraint,
    ConstraintSpec, DemoConfig, SphereConstraint,
};
use lsqdiff::solvers::{cgls, dense_lstsq, make_illconditioned, Precision};
use lsqdiff::testkit::{dense_pinv_apply, dense_solve, fd_objective_gradients, SolutionObjective, seeded_matrix, seeded_normal, FdConfig};
use lsqdiff::vecops::{dot, max_abs_diff, norm, rel_err, sub};
use lsqdiff::{lsmr, LstSqProblem, OpRef, SolveConfig};

use crate::fault::FaultyAdjoint;

/// Result of one property suite.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    fn from_error(context: &str, err: lsqdiff::Error) -> Self {
        Self::new(false, format!("{context}: {err}"))
    }
}

macro_rules! attempt {
    ($expr:expr, $ctx:expr) => {
        match $expr {
            Ok(v) => v,
            Err(e) => return Outcome::from_error(&$ctx, e),
        }
    };
}

fn uniforms(len: usize, seed: u64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0.0..hi)).collect()
}

/// LSMR against the dense QR oracle on tall 200×50 and wide 50×200 problems,
/// cond ≤ 10³ and λ ∈ {0, 0.1, 1}.
pub fn solver_oracle(instances: usize, seed: u64) -> Outcome {
    let lambdas = [0.0, 0.1, 1.0];
    // Without reorthogonalization a cond-10³ system can need several times
    // min(m, n) iterations to reach 1e-8.
    let cfg = SolveConfig {
        max_iter: Some(20 * 50),
        ..SolveConfig::with_tol(1e-14)
    };
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let s = seed.wrapping_mul(1000).wrapping_add(i as u64);
        let cond = 10f64.powf(uniforms(1, s ^ 0xc0, 3.0)[0]);
        let (m, n) = if i % 2 == 0 { (200, 50) } else { (50, 200) };
        let lambda = lambdas[(i / 2) % 3];
        let a = make_illconditioned(m, n, cond, s);
        let b = seeded_normal(m, s.wrapping_add(17));
        let op: OpRef = Arc::new(attempt!(Dense::from_matrix(&a), "dense operator"));
        let problem = attempt!(LstSqProblem::new(op, b.clone(), lambda), "problem");
        let x = attempt!(lsmr(&problem, &cfg), format!("instance {i}")).x;
        let oracle = attempt!(dense_lstsq(&a, &b, lambda), format!("oracle {i}"));
        let e = rel_err(&x, &oracle);
        if !(e <= 1e-8) {
            return Outcome::new(
                false,
                format!("instance {i} ({m}×{n}, cond {cond:.1}, λ {lambda}): rel err {e:.2e}"),
            );
        }
        worst = worst.max(e);
    }
    Outcome::new(true, format!("{instances} instances, worst rel err {worst:.2e}"))
}

/// Single-precision LSMR and CGLS on `rows×50` with cond = 1/ε_f32.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example1Run {
    pub seed: u64,
    pub lsmr_err: f64,
    pub cgls_err: f64,
    pub lsmr_iters: usize,
    pub cgls_iters: usize,
}

pub const SINGLE_EPS_COND: f64 = 1.0 / (f32::EPSILON as f64);

pub fn example1_config(cols: usize) -> SolveConfig {
    SolveConfig {
        precision: Precision::Single,
        reorth_window: cols,
        ..SolveConfig::with_tol(1e-14)
    }
}

pub fn example1_run(rows: usize, cols: usize, seed: u64) -> lsqdiff::Result<Example1Run> {
    let a = make_illconditioned(rows, cols, SINGLE_EPS_COND, seed);
    let b = seeded_normal(rows, seed.wrapping_add(0x5eed));
    let op: OpRef = Arc::new(Dense::from_matrix(&a)?);
    let problem = LstSqProblem::new(op, b.clone(), 0.0)?;
    let oracle = dense_lstsq(&a, &b, 0.0)?;
    let cfg = example1_config(cols);
    let l = lsmr(&problem, &cfg)?;
    let c = cgls(&problem, &SolveConfig { reorth_window: 0, ..cfg })?;
    Ok(Example1Run {
        seed,
        lsmr_err: rel_err(&l.x, &oracle),
        cgls_err: rel_err(&c.x, &oracle),
        lsmr_iters: l.iterations,
        cgls_iters: c.iterations,
    })
}

pub fn example1(rows: usize, seeds: std::ops::Range<u64>) -> Outcome {
    let mut parts = Vec::new();
    let mut passed = true;
    for seed in seeds {
        let r = attempt!(example1_run(rows, 50, seed), format!("seed {seed}"));
        let ratio = r.lsmr_err / r.cgls_err;
        passed &= ratio <= 0.1;
        parts.push(format!("s{seed}: {:.3}/{:.3}", r.lsmr_err, r.cgls_err));
    }
    Outcome::new(passed, format!("lsmr/cgls rel err {}", parts.join(", ")))
}

/// Length scale of the RFF operators in the gradient suite.
pub const RFF_LENGTH_SCALE: f64 = 0.2;

/// Operator families exercised by the gradient suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradKind {
    Dense,
    Diagonal,
    Convolution,
    Rff,
}

impl GradKind {
    pub const ALL: [GradKind; 4] = [GradKind::Dense, GradKind::Diagonal, GradKind::Convolution, GradKind::Rff];

    /// A seeded operator; `wide` selects the wide shape where the family has one.
    pub fn build(self, wide: bool, seed: u64) -> lsqdiff::Result<OpRef> {
        Ok(match self {
            GradKind::Dense => {
                let (m, n) = if wide { (5, 12) } else { (12, 5) };
                Arc::new(Dense::from_matrix(&seeded_matrix(m, n, seed))?)
            }
            GradKind::Diagonal => {
                let d = seeded_normal(8, seed).iter().map(|z| 1.0 + z.abs()).collect();
                Arc::new(Diagonal::new(d))
            }
            GradKind::Convolution => {
                let mut k: Vec<f64> = seeded_normal(3, seed).iter().map(|z| 0.3 * z).collect();
                k[0] += 2.0;
                Arc::new(Convolution1D::new(k, 16)?)
            }
            GradKind::Rff => {
                let (m, k) = if wide { (6, 20) } else { (30, 6) };
                let x: Vec<f64> = (0..m).map(|i| i as f64 / m as f64).collect();
                let w = seeded_normal(k, seed);
                let b = uniforms(k, seed ^ 0xb, std::f64::consts::TAU);
                Arc::new(RffFeatures::new(&x, 1, &w, &b, 1.2, RFF_LENGTH_SCALE)?)
            }
        })
    }
}

/// Worst relative FD error per part and the inner-solve counts of every pullback.
#[derive(Debug, Clone, Default)]
pub struct GradStats {
    pub cases: usize,
    pub worst_fd: f64,
    pub worst_case: String,
    pub solve_counts: Vec<usize>,
}

fn part_errors(bundle: &GradientBundle, fd: &lsqdiff::testkit::FdSolveGradients) -> [f64; 3] {
    [
        rel_err(&bundle.grad_params, &fd.grad_params),
        rel_err(&bundle.grad_b, &fd.grad_b),
        rel_err(&[bundle.grad_lambda], &[fd.grad_lambda]),
    ]
}

/// Scalar objectives `μ(x)` the gradient suite differentiates through the solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    HalfSquaredNorm,
    Linear,
    HalfSquaredDistance,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::HalfSquaredNorm, Objective::Linear, Objective::HalfSquaredDistance];

    /// Binds the linear weight / reference point `w`.
    pub fn with(self, w: &[f64]) -> BoundObjective<'_> {
        BoundObjective { kind: self, w }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundObjective<'a> {
    kind: Objective,
    w: &'a [f64],
}

impl BoundObjective<'_> {
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            Objective::HalfSquaredNorm => x.to_vec(),
            Objective::Linear => self.w.to_vec(),
            Objective::HalfSquaredDistance => sub(x, self.w),
        }
    }
}

impl SolutionObjective for BoundObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        match self.kind {
            Objective::HalfSquaredNorm => 0.5 * dot(x, x),
            Objective::Linear => dot(self.w, x),
            Objective::HalfSquaredDistance => 0.5 * norm(&sub(x, self.w)).powi(2),
        }
    }

    /// Exact for quadratics: `μ(u) − μ(d) = ⟨u − d, ∇μ((u + d)/2)⟩`.
    fn difference(&self, up: &[f64], down: &[f64]) -> f64 {
        let mid: Vec<f64> = up.iter().zip(down).map(|(u, d)| 0.5 * (u + d)).collect();
        dot(&sub(up, down), &self.grad(&mid))
    }
}

pub fn gradient_stats(kinds: &[GradKind], lambdas: &[f64], seeds: u64, fault: bool) -> lsqdiff::Result<GradStats> {
    let cfg = SolveConfig::with_tol(1e-12);
    let mut stats = GradStats::default();
    for &kind in kinds {
        for &lambda in lambdas {
            for seed in 0..seeds {
                for wide in [false, true] {
                    let mut op = kind.build(wide, seed)?;
                    if fault {
                        op = Arc::new(FaultyAdjoint(op));
                    }
                    let b = seeded_normal(op.rows(), seed + 1000);
                    let w = seeded_normal(op.cols(), seed + 2000);
                    let problem = LstSqProblem::new(op.clone(), b.clone(), lambda)?;
                    let x = lsmr(&problem, &cfg)?.require_converged("gradient suite forward")?.x;
                    for objective in Objective::ALL {
                        let mu = objective.with(&w);
                        let cot = Cotangent::new(mu.grad(&x))?;
                        let bundle = if wide {
                            grad_wide(&problem, &x, &cot, &cfg)?
                        } else {
                            grad_tall(&problem, &x, &cot, &cfg)?
                        };
                        let fd = fd_objective_gradients(
                            &op,
                            &b,
                            lambda,
                            &mu,
                            dense_solve,
                            &FdConfig::default(),
                        )?;
                        let err = part_errors(&bundle, &fd).into_iter().fold(0.0, f64::max);
                        stats.cases += 1;
                        stats.solve_counts.push(bundle.inner_solves);
                        if !(err <= stats.worst_fd) {
                            stats.worst_fd = err;
                            stats.worst_case = format!(
                                "{kind:?} {} λ={lambda} seed {seed} {objective:?}",
                                if wide { "wide" } else { "tall" }
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(stats)
}

pub fn gradients_fd(stats: &GradStats) -> Outcome {
    Outcome::new(
        stats.worst_fd <= 1e-5,
        format!(
            "{} cases, worst rel err {:.2e} ({})",
            stats.cases, stats.worst_fd, stats.worst_case
        ),
    )
}

pub fn gradients_solve_count(stats: &GradStats) -> Outcome {
    let bad = stats.solve_counts.iter().filter(|&&c| c != 2).count();
    Outcome::new(
        bad == 0 && !stats.solve_counts.is_empty(),
        format!("{} pullbacks, {bad} with a solve count other than 2", stats.solve_counts.len()),
    )
}

/// Adjoint consistency of every operator family; fails loudly on an injected fault.
pub fn dot_tests(seed: u64, fault: bool) -> Outcome {
    let mut ops: Vec<(&str, OpRef)> = Vec::new();
    for kind in GradKind::ALL {
        for wide in [false, true] {
            ops.push((
                match kind {
                    GradKind::Dense => "dense",
                    GradKind::Diagonal => "diagonal",
                    GradKind::Convolution => "convolution",
                    GradKind::Rff => "rff",
                },
                attempt!(kind.build(wide, seed), "operator"),
            ));
        }
    }
    let top: OpRef = Arc::new(attempt!(Dense::from_matrix(&seeded_matrix(4, 6, seed + 1)), "dense"));
    let bottom: OpRef = Arc::new(attempt!(Dense::from_matrix(&seeded_matrix(3, 6, seed + 2)), "dense"));
    ops.push(("stacked", Arc::new(attempt!(Stacked::new(top.clone(), bottom), "stacked"))));
    ops.push((
        "composed",
        Arc::new(attempt!(Composed::new(top, Arc::new(Diagonal::new(seeded_normal(6, seed + 3)))), "composed")),
    ));
    let mut worst: f64 = 0.0;
    for (name, op) in ops {
        let op: OpRef = if fault { Arc::new(FaultyAdjoint(op)) } else { op };
        let t = attempt!(dot_test(op.as_ref(), 8, seed), name);
        if !(t.max_relative <= 1e-12) {
            return Outcome::new(false, format!("{name}: relative discrepancy {:.2e}", t.max_relative));
        }
        worst = worst.max(t.max_relative);
    }
    Outcome::new(true, format!("worst relative discrepancy {worst:.2e}"))
}

/// Sphere toy: feasibility, stationarity, closed-form optimum and the penalty contrast.
pub fn sphere(seed: u64) -> Outcome {
    let r = attempt!(sphere_demo(&DemoConfig { seed, ..DemoConfig::default() }), "sphere demo");
    let last = r.final_record();
    let oracle_err = r.oracle_error.unwrap_or(f64::INFINITY);
    let penalty = r
        .baselines
        .iter()
        .find(|b| b.name.starts_with("penalty"))
        .map_or(0.0, |b| b.final_primal_residual);
    let passed = last.primal_residual <= 1e-6
        && last.stationarity_residual <= 1e-4
        && oracle_err <= 1e-4
        && penalty > 1e-3;
    Outcome::new(
        passed,
        format!(
            "‖c‖ {:.1e}, stationarity {:.1e}, optimum err {:.1e}, penalty ‖c‖ {:.3}",
            last.primal_residual, last.stationarity_residual, oracle_err, penalty
        ),
    )
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Tangent projection against the dense projector and the kernel condition.
pub fn tangent_projection(instances: usize, seed: u64) -> Outcome {
    let cfg = SolveConfig::with_tol(1e-14);
    let (mut worst_kernel, mut worst_oracle): (f64, f64) = (0.0, 0.0);
    for i in 0..instances {
        let s = seed.wrapping_mul(7919).wrapping_add(i as u64);
        let d = 2 + (i * 5) % 15;
        let k = 1 + i % d.min(4);
        let theta = seeded_normal(d, s);
        let v = seeded_normal(d, s + 1);
        let (spec, jac): (Arc<dyn ConstraintSpec>, DMatrix<f64>) = if i % 3 == 0 {
            let jac = DMatrix::from_row_slice(1, d, &theta.iter().map(|t| 2.0 * t).collect::<Vec<_>>());
            (Arc::new(SphereConstraint { dim: d }), jac)
        } else {
            let m = seeded_matrix(k, d, s + 2);
            let spec = AffineConstraint {
                matrix: m.clone(),
                offset: seeded_normal(k, s + 3),
            };
            (Arc::new(spec), m)
        };
        let p = attempt!(project_tangent(&theta, &v, &spec, &cfg), format!("instance {i}"));
        let jp = &jac * DVector::from_column_slice(&p);
        let kernel = jp.norm() / (spectral_norm(&jac) * norm(&v));
        let jv = (&jac * DVector::from_column_slice(&v)).as_slice().to_vec();
        let row = attempt!(dense_pinv_apply(&jac, &jv), "dense pseudo-inverse");
        let dense: Vec<f64> = v.iter().zip(&row).map(|(a, b)| a - b).collect();
        worst_kernel = worst_kernel.max(kernel);
        worst_oracle = worst_oracle.max(max_abs_diff(&p, &dense));
    }
    Outcome::new(
        worst_kernel <= 1e-8 && worst_oracle <= 1e-8,
        format!("{instances} instances, ‖J P v‖/(‖J‖‖v‖) ≤ {worst_kernel:.1e}, projector diff ≤ {worst_oracle:.1e}"),
    )
}

/// `min ‖Wx − v‖² s.t. Ax = b` through the substitution versus the dense KKT system.
pub fn weighted_reduction(instances: usize, seed: u64) -> Outcome {
    let cfg = SolveConfig::with_tol(1e-14);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let s = seed.wrapping_mul(104_729).wrapping_add(i as u64);
        let n = 4 + i % 9;
        let k = 1 + i % (n - 1);
        let a = seeded_matrix(k, n, s);
        let b = seeded_normal(k, s + 1);
        let w: Vec<f64> = seeded_normal(n, s + 2).iter().map(|z| 0.5 + z.abs()).collect();
        let v = seeded_normal(n, s + 3);

        // KKT: [2W² Aᵀ; A 0] [x; μ] = [2Wv; b]
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        for j in 0..n {
            kkt[(j, j)] = 2.0 * w[j] * w[j];
            rhs[j] = 2.0 * w[j] * v[j];
        }
        kkt.view_mut((0, n), (n, k)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (k, n)).copy_from(&a);
        rhs.rows_mut(n, k).copy_from_slice(&b);
        let Some(sol) = kkt.lu().solve(&rhs) else {
            return Outcome::new(false, format!("instance {i}: singular KKT system"));
        };
        let direct = sol.rows(0, n).as_slice().to_vec();

        let op: OpRef = Arc::new(attempt!(Dense::from_matrix(&a), "dense"));
        let red = attempt!(weighted_to_standard(&w, &v, op, &b), format!("instance {i}"));
        let problem = attempt!(LstSqProblem::new(red.op.clone(), red.b.clone(), 0.0), "problem");
        let z = attempt!(lsmr(&problem, &cfg), format!("instance {i}")).x;
        let x = attempt!(red.recover(&z), "recover");
        worst = worst.max(rel_err(&x, &direct));
    }
    Outcome::new(worst <= 1e-8, format!("{instances} instances, worst rel err {worst:.2e}"))
}

pub fn commutant(seed: u64) -> Outcome {
    let r = attempt!(commutant_demo(&DemoConfig { seed, ..DemoConfig::default() }), "commutant demo");
    let err = r.oracle_error.unwrap_or(f64::INFINITY);
    Outcome::new(err <= 1e-4, format!("distance to group average {err:.2e}"))
}

pub fn sparsity(seed: u64) -> Outcome {
    let r = attempt!(sparsity_demo(&DemoConfig { seed, ..DemoConfig::default() }), "sparsity demo");
    let c = r.final_record().primal_residual;
    Outcome::new(c <= 1e-3, format!("final |c| {c:.2e}"))
}

/// Small-scale GP checks: fit against normal equations, PRED gradient against FD,
/// LML against the dense covariance.
pub fn gp_small(seed: u64) -> Outcome {
    let data = gp::make_dataset(seed);
    let hyper = gp::Hyper {
        sigma: 0.9,
        ell: 0.3,
        lambda: 0.4,
    };
    let model = attempt!(gp::RffModel::new(12, 1, hyper, seed), "model");
    let (x, y) = (&data.x_train[..64], &data.y_train[..64]);
    let tight = gp::tight_config(1e-13);
    let z = attempt!(gp::gp_fit_with(&model, x, y, &tight), "fit");
    let phi = attempt!(model.operator(x), "features").matrix();
    let lhs = phi.transpose() * &phi + DMatrix::identity(12, 12) * hyper.lambda.powi(2);
    let rhs = phi.transpose() * DVector::from_column_slice(y);
    let Some(oracle) = lhs.lu().solve(&rhs) else {
        return Outcome::new(false, "singular normal equations");
    };
    let fit_err = rel_err(&z, oracle.as_slice());

    let pred_cfg = gp::PredConfig {
        solver: tight,
        ..gp::PredConfig::default()
    };
    let loss = attempt!(gp::loss_pred(&model, x, y, &pred_cfg), "pred loss");
    let f = |t: &[f64]| {
        let h = gp::Hyper {
            sigma: t[0],
            ell: t[1],
            lambda: t[2],
        };
        Ok(gp::loss_pred(&model.with_hyper(h), x, y, &pred_cfg)?.value)
    };
    let fd = attempt!(
        lsqdiff::testkit::fd_grad(f, &[hyper.sigma, hyper.ell, hyper.lambda], &FdConfig::default()),
        "fd"
    );
    let grad_err = rel_err(&loss.grad, &fd);

    let lml = attempt!(gp::loss_lml(&model, x, y), "lml");
    let dense = attempt!(gp::loss_lml_dense(&phi, hyper.lambda, y), "dense lml");
    let lml_err = ((lml - dense) / dense).abs();
    Outcome::new(
        fit_err <= 1e-6 && grad_err <= 1e-4 && lml_err <= 1e-8,
        format!("fit {fit_err:.1e}, pred grad {grad_err:.1e}, lml {lml_err:.1e}"),
    )
}

/// One calibration pair per seed, run back to back so their wall times are comparable.
#[derive(Debug, Clone)]
pub struct GpPair {
    pub seed: u64,
    pub pred: gp::CalibrationResult,
    pub lml: gp::CalibrationResult,
}

pub fn gp_pairs(seeds: std::ops::Range<u64>, settings: &gp::CalibrationSettings) -> lsqdiff::Result<Vec<GpPair>> {
    seeds
        .map(|seed| {
            let data = gp::make_dataset(seed);
            Ok(GpPair {
                seed,
                pred: gp::calibrate(Method::Pred, &data, settings, seed)?,
                lml: gp::calibrate(Method::Lml, &data, settings, seed)?,
            })
        })
        .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn gp_median_rmse(pairs: &[GpPair]) -> Outcome {
    let mut pred: Vec<f64> = pairs.iter().map(|p| p.pred.test_rmse).collect();
    let mut lml: Vec<f64> = pairs.iter().map(|p| p.lml.test_rmse).collect();
    let (mp, ml) = (median(&mut pred), median(&mut lml));
    Outcome::new(mp <= ml, format!("median test RMSE pred {mp:.5} vs lml {ml:.5}"))
}

pub fn gp_wall_time(pairs: &[GpPair]) -> Outcome {
    let slower: Vec<u64> = pairs
        .iter()
        .filter(|p| !(p.pred.wall_ms < p.lml.wall_ms))
        .map(|p| p.seed)
        .collect();
    let ratio: Vec<String> = pairs
        .iter()
        .map(|p| format!("{:.1}", p.lml.wall_ms / p.pred.wall_ms))
        .collect();
    Outcome::new(
        slower.is_empty() && !pairs.is_empty(),
        format!("lml/pred wall ratio per seed [{}], pred not faster on {slower:?}", ratio.join(", ")),
    )
}

/// Runs a suite and reports its wall time in seconds alongside.
pub fn timed<F: FnOnce() -> Outcome>(f: F) -> (Outcome, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}
