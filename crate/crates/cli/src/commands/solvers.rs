use std::sync::Arc;
use std::time::Instant;

use lsqdiff::solvers::{cgls, dense_lstsq, make_illconditioned, Precision};
use lsqdiff::testkit::seeded_normal;
use lsqdiff::vecops::rel_err;
use lsqdiff::linop::Dense;
use lsqdiff::{lsmr, LstSqProblem, OpRef, SolveConfig, SolveReport};

use crate::args::{BenchSolversArgs, Common};
use crate::manifest::{write_csv, RunManifest};
use crate::CliError;

pub const HEADER: &str = "solver,m,n,cond,precision,iterations,rel_error,resid_norm,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct SolverRow {
    pub solver: &'static str,
    pub m: usize,
    pub n: usize,
    pub cond: f64,
    pub precision: Precision,
    pub iterations: usize,
    pub rel_error: f64,
    pub resid_norm: f64,
    pub wall_ms: f64,
}

impl SolverRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:e},{},{},{:e},{:e},{:.3}",
            self.solver,
            self.m,
            self.n,
            self.cond,
            self.precision,
            self.iterations,
            self.rel_error,
            self.resid_norm,
            self.wall_ms
        )
    }
}

/// LSMR and CGLS on one seeded `m×n` problem with singular values in `[1, cond]`.
pub fn run_case(
    m: usize,
    n: usize,
    cond: f64,
    precision: Precision,
    tol: f64,
    reorth: usize,
    seed: u64,
) -> lsqdiff::Result<[SolverRow; 2]> {
    let a = make_illconditioned(m, n, cond, seed);
    let b = seeded_normal(m, seed.wrapping_add(0x5eed));
    let oracle = dense_lstsq(&a, &b, 0.0)?;
    let op: OpRef = Arc::new(Dense::from_matrix(&a)?);
    let problem = LstSqProblem::new(op, b, 0.0)?;
    let base = SolveConfig {
        precision,
        ..SolveConfig::with_tol(tol)
    };
    let row = |solver, report: SolveReport, wall_ms| SolverRow {
        solver,
        m,
        n,
        cond,
        precision,
        iterations: report.iterations,
        rel_error: rel_err(&report.x, &oracle),
        resid_norm: report.resid_norm,
        wall_ms,
    };
    let start = Instant::now();
    let l = lsmr(
        &problem,
        &SolveConfig {
            reorth_window: reorth,
            ..base
        },
    )?;
    let l_ms = start.elapsed().as_secs_f64() * 1e3;
    let start = Instant::now();
    let c = cgls(&problem, &base)?;
    let c_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok([row("lsmr", l, l_ms), row("cgls", c, c_ms)])
}

pub fn run(common: &Common, args: &BenchSolversArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    if !(args.tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be positive, got {}", args.tol)));
    }
    if let Some(bad) = args.cond.iter().find(|c| !(**c >= 1.0)) {
        return Err(CliError::Usage(format!("--cond values must be ≥ 1, got {bad}")));
    }
    if args.m.iter().chain(&args.n).any(|&d| d == 0) {
        return Err(CliError::Usage("--m and --n must be positive".into()));
    }
    let precision = common.precision.unwrap_or(Precision::Double);
    let mut rows = Vec::new();
    for &m in &args.m {
        for &n in &args.n {
            for &cond in &args.cond {
                let reorth = args.reorth.resolve(m.min(n));
                for row in run_case(m, n, cond, precision, args.tol, reorth, common.seed)? {
                    rows.push(row.csv());
                }
            }
        }
    }
    write_csv(manifest, common.out.as_ref(), HEADER, &rows)
}
