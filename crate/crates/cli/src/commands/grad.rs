use std::sync::Arc;
use std::time::Instant;

use lsqdiff::adjoint::{grad_tall, grad_wide, Cotangent, GradientBundle};
use lsqdiff::linop::Convolution1D;
use lsqdiff::testkit::{fd_grad, seeded_normal, FdConfig};
use lsqdiff::vecops::{dot, norm, rel_err};
use lsqdiff::{lsmr, LstSqProblem, OpRef, SolveConfig};

use crate::args::{BenchGradArgs, Common};
use crate::manifest::{write_csv, RunManifest};
use crate::CliError;

pub const HEADER: &str = "case,mode,m,n,p,grad,fd_rel_err,inner_solves,wall_ms";

/// Largest acceptable growth exponent of gradient wall time in problem size.
pub const MAX_SCALING_SLOPE: f64 = 1.3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub mode: &'static str,
    pub n: usize,
    pub p: usize,
    pub grad: &'static str,
    pub fd_rel_err: f64,
    pub inner_solves: usize,
    pub wall_ms: f64,
}

impl GradRow {
    pub fn csv(&self) -> String {
        format!(
            "convolution,{},{},{},{},{},{:e},{},{:.3}",
            self.mode, self.n, self.n, self.p, self.grad, self.fd_rel_err, self.inner_solves, self.wall_ms
        )
    }
}

fn kernel(p: usize, seed: u64) -> Vec<f64> {
    let mut k: Vec<f64> = seeded_normal(p, seed).iter().map(|z| 0.3 * z / p as f64).collect();
    k[0] += 2.0;
    k
}

/// Gradient rows (θ, b, λ) for the tall and wide routes on one square convolution.
/// The b-gradient is checked along one random direction.
pub fn run_size(n: usize, p: usize, lambda: f64, repeats: usize, seed: u64) -> lsqdiff::Result<Vec<GradRow>> {
    let op: OpRef = Arc::new(Convolution1D::new(kernel(p, seed), n)?);
    let b = seeded_normal(n, seed.wrapping_add(1));
    let g = seeded_normal(n, seed.wrapping_add(2));
    let dir: Vec<f64> = {
        let d = seeded_normal(n, seed.wrapping_add(3));
        let s = norm(&d);
        d.iter().map(|v| v / s).collect()
    };
    let cfg = SolveConfig::with_tol(1e-12);
    let solve = |op: &OpRef, b: &[f64], l: f64| -> lsqdiff::Result<f64> {
        let problem = LstSqProblem::new(op.clone(), b.to_vec(), l)?;
        Ok(dot(&g, &lsmr(&problem, &cfg)?.require_converged("bench-grad FD")?.x))
    };
    let fd_cfg = FdConfig::default();
    let fd_params = fd_grad(|t| solve(&op.with_params(t)?, &b, lambda), &op.params(), &fd_cfg)?;
    let fd_b_dir = fd_grad(
        |t| {
            let shifted: Vec<f64> = b.iter().zip(&dir).map(|(bi, di)| bi + t[0] * di).collect();
            solve(&op, &shifted, lambda)
        },
        &[0.0],
        &fd_cfg,
    )?[0];
    let fd_lambda = fd_grad(|l| solve(&op, &b, l[0]), &[lambda], &fd_cfg)?[0];

    let problem = LstSqProblem::new(op.clone(), b.clone(), lambda)?;
    let x = lsmr(&problem, &cfg)?.require_converged("bench-grad forward")?.x;
    let cot = Cotangent::new(g.clone())?;
    let mut rows = Vec::new();
    for mode in ["tall", "wide"] {
        let pull = || -> lsqdiff::Result<GradientBundle> {
            if mode == "tall" {
                grad_tall(&problem, &x, &cot, &cfg)
            } else {
                grad_wide(&problem, &x, &cot, &cfg)
            }
        };
        let mut best = f64::INFINITY;
        let mut bundle = None;
        for _ in 0..repeats.max(1) {
            let start = Instant::now();
            let out = pull()?;
            best = best.min(start.elapsed().as_secs_f64() * 1e3);
            bundle = Some(out);
        }
        let bundle = bundle.expect("at least one repeat");
        let errs = [
            ("params", rel_err(&bundle.grad_params, &fd_params)),
            ("b", rel_err(&[dot(&bundle.grad_b, &dir)], &[fd_b_dir])),
            ("lambda", rel_err(&[bundle.grad_lambda], &[fd_lambda])),
        ];
        for (grad, fd_rel_err) in errs {
            rows.push(GradRow {
                mode,
                n,
                p,
                grad,
                fd_rel_err,
                inner_solves: bundle.inner_solves,
                wall_ms: best,
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `log t` against `log n`.
pub fn scaling_slope(points: &[(usize, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, t)| *t > 0.0)
        .map(|&(n, t)| ((n as f64).ln(), t.ln()))
        .collect();
    let k = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / k,
        pts.iter().map(|p| p.1).sum::<f64>() / k,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn run(common: &Common, args: &BenchGradArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    if args.kernel == 0 || args.sizes.iter().any(|&n| n < args.kernel) {
        return Err(CliError::Usage("--kernel must be ≥ 1 and no larger than every size".into()));
    }
    if !(args.lambda >= 0.0) {
        return Err(CliError::Usage(format!("--lambda must be ≥ 0, got {}", args.lambda)));
    }
    let mut rows = Vec::new();
    for &n in &args.sizes {
        rows.extend(run_size(n, args.kernel, args.lambda, args.repeats, common.seed)?);
    }
    write_csv(manifest, common.out.as_ref(), HEADER, &rows.iter().map(GradRow::csv).collect::<Vec<_>>())?;

    let mut failures = Vec::new();
    if let Some(r) = rows.iter().find(|r| r.inner_solves != 2) {
        failures.push(format!("{} n={} used {} inner solves", r.mode, r.n, r.inner_solves));
    }
    if let Some(r) = rows.iter().find(|r| !(r.fd_rel_err <= 1e-5)) {
        failures.push(format!("{} n={} {}: FD rel err {:.2e}", r.mode, r.n, r.grad, r.fd_rel_err));
    }
    if args.sizes.len() >= 3 {
        for mode in ["tall", "wide"] {
            let pts: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| r.mode == mode && r.grad == "params")
                .map(|r| (r.n, r.wall_ms))
                .collect();
            let slope = scaling_slope(&pts);
            eprintln!("{mode}: wall-time growth exponent {slope:.2}");
            if !(slope <= MAX_SCALING_SLOPE) {
                failures.push(format!("{mode}: wall time grows like n^{slope:.2}"));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failures.join("; ")))
    }
}
