use crate::args::{CheckArgs, Common};
use crate::props::{self, GradKind, Outcome};
use crate::CliError;

/// Names of every suite `check` knows about, in run order.
pub const SUITES: [&str; 10] = [
    "linop.dot_test",
    "solvers.oracle",
    "adjoint.fd",
    "adjoint.solve_count",
    "nullspace.sphere",
    "nullspace.projection",
    "nullspace.weighted",
    "nullspace.commutant",
    "nullspace.sparsity",
    "gp.small",
];

fn run_suite(name: &str, seed: u64, fault: bool, grads: &mut Option<props::GradStats>) -> Outcome {
    let mut grad_stats = || -> Result<props::GradStats, Outcome> {
        if grads.is_none() {
            let s = props::gradient_stats(&GradKind::ALL, &[0.0, 0.1, 1.0], 20, fault)
                .map_err(|e| Outcome::new(false, format!("gradient suite: {e}")))?;
            *grads = Some(s);
        }
        Ok(grads.clone().expect("filled above"))
    };
    match name {
        "linop.dot_test" => props::dot_tests(seed, fault),
        "solvers.oracle" => props::solver_oracle(100, seed),
        "adjoint.fd" => grad_stats().map_or_else(|o| o, |s| props::gradients_fd(&s)),
        "adjoint.solve_count" => grad_stats().map_or_else(|o| o, |s| props::gradients_solve_count(&s)),
        "nullspace.sphere" => props::sphere(seed),
        "nullspace.projection" => props::tangent_projection(30, seed),
        "nullspace.weighted" => props::weighted_reduction(20, seed),
        "nullspace.commutant" => props::commutant(seed),
        "nullspace.sparsity" => props::sparsity(seed),
        "gp.small" => props::gp_small(seed),
        other => Outcome::new(false, format!("unknown suite {other}")),
    }
}

/// Runs every suite whose name contains `filter`.
pub fn run_check(seed: u64, filter: Option<&str>, fault: bool) -> Vec<(&'static str, Outcome, f64)> {
    let mut grads = None;
    SUITES
        .iter()
        .filter(|name| filter.is_none_or(|f| name.contains(f)))
        .map(|&name| {
            let (out, secs) = props::timed(|| run_suite(name, seed, fault, &mut grads));
            (name, out, secs)
        })
        .collect()
}

pub fn summary_table(results: &[(&str, Outcome, f64)]) -> String {
    let width = results.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}  {:<6}  {:>8}  detail\n", "suite", "status", "secs");
    for (name, o, secs) in results {
        let status = if o.passed { "ok" } else { "FAILED" };
        out.push_str(&format!("{name:<width$}  {status:<6}  {secs:>8.2}  {}\n", o.detail));
    }
    out
}

pub fn run(common: &Common, args: &CheckArgs) -> Result<(), CliError> {
    let results = run_check(common.seed, args.filter.as_deref(), args.inject_adjoint_fault);
    if results.is_empty() {
        return Err(CliError::Usage(format!(
            "--filter {:?} matches no suite; known suites: {}",
            args.filter.as_deref().unwrap_or(""),
            SUITES.join(", ")
        )));
    }
    print!("{}", summary_table(&results));
    let failed: Vec<&str> = results.iter().filter(|r| !r.1.passed).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("all {} suites passed", results.len());
        Ok(())
    } else {
        Err(CliError::Validation(format!("failing properties: {}", failed.join(", "))))
    }
}
