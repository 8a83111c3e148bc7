//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//! Run with `cargo test -p lsqdiff-cli --test acceptance`.

use std::process::{Command, ExitCode};
use std::time::Instant;

use lsqdiff::gp::CalibrationSettings;
use lsqdiff_cli::props::{self, GradKind, Outcome};

struct Criterion {
    id: u32,
    title: &'static str,
    budget_secs: f64,
}

fn report(c: &Criterion, outcome: Outcome, secs: f64, failures: &mut Vec<u32>) {
    let in_time = secs < c.budget_secs;
    let passed = outcome.passed && in_time;
    let budget = if in_time {
        format!("{secs:.1}s < {:.0}s", c.budget_secs)
    } else {
        format!("{secs:.1}s OVER BUDGET {:.0}s", c.budget_secs)
    };
    println!(
        "criterion {:>2}: {} {} ({}; {budget})",
        c.id,
        if passed { "PASS" } else { "FAIL" },
        c.title,
        outcome.detail
    );
    if !passed {
        failures.push(c.id);
    }
}

fn run_check(extra: &[&str]) -> (Option<i32>, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_lsqdiff"))
        .arg("check")
        .args(extra)
        .env_remove("LSQDIFF_SEED")
        .output()
        .expect("spawn lsqdiff");
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    (out.status.code(), text)
}

fn main() -> ExitCode {
    let mut failures = Vec::new();

    let c = Criterion { id: 1, title: "LSMR matches dense QR on 100 instances", budget_secs: 30.0 };
    let (o, t) = props::timed(|| props::solver_oracle(100, 0));
    report(&c, o, t, &mut failures);

    let c = Criterion { id: 2, title: "single-precision LSMR ≤ 0.1× CGLS error, 10⁴×50, 5 seeds", budget_secs: 120.0 };
    let (o, t) = props::timed(|| props::example1(10_000, 0..5));
    report(&c, o, t, &mut failures);

    let start = Instant::now();
    let stats = props::gradient_stats(&GradKind::ALL, &[0.0, 0.1, 1.0], 20, false);
    let grad_secs = start.elapsed().as_secs_f64();
    let (fd, count) = match &stats {
        Ok(s) => (props::gradients_fd(s), props::gradients_solve_count(s)),
        Err(e) => (
            Outcome::new(false, format!("gradient grid: {e}")),
            Outcome::new(false, format!("gradient grid: {e}")),
        ),
    };
    let c = Criterion { id: 3, title: "adjoint gradients match finite differences", budget_secs: 120.0 };
    report(&c, fd, grad_secs, &mut failures);
    let c = Criterion { id: 4, title: "exactly two inner solves per pullback", budget_secs: 120.0 };
    report(&c, count, grad_secs, &mut failures);

    let c = Criterion { id: 5, title: "null-space method on the sphere", budget_secs: 10.0 };
    let (o, t) = props::timed(|| props::sphere(0));
    report(&c, o, t, &mut failures);

    let c = Criterion { id: 6, title: "tangent projection geometry", budget_secs: 10.0 };
    let (o, t) = props::timed(|| props::tangent_projection(60, 0));
    report(&c, o, t, &mut failures);

    let c = Criterion { id: 7, title: "weighted reduction on 20 instances", budget_secs: 5.0 };
    let (o, t) = props::timed(|| props::weighted_reduction(20, 0));
    report(&c, o, t, &mut failures);

    let start = Instant::now();
    let pairs = props::gp_pairs(0..10, &CalibrationSettings::default());
    let gp_secs = start.elapsed().as_secs_f64();
    let (rmse, wall) = match &pairs {
        Ok(p) => (props::gp_median_rmse(p), props::gp_wall_time(p)),
        Err(e) => (
            Outcome::new(false, format!("calibration: {e}")),
            Outcome::new(false, format!("calibration: {e}")),
        ),
    };
    let both = Outcome::new(
        rmse.passed && wall.passed,
        format!(
            "(a) {}: {}; (b) {}: {}",
            if rmse.passed { "pass" } else { "FAIL" },
            rmse.detail,
            if wall.passed { "pass" } else { "FAIL" },
            wall.detail
        ),
    );
    let c = Criterion { id: 8, title: "GP calibration over 10 seeds", budget_secs: 900.0 };
    report(&c, both, gp_secs, &mut failures);

    let c = Criterion { id: 9, title: "constraint-shape coverage: commutant, sparsity, sphere", budget_secs: 120.0 };
    let (o, t) = props::timed(|| {
        let parts = [("commutant", props::commutant(0)), ("sparsity", props::sparsity(0)), ("sphere", props::sphere(0))];
        Outcome::new(
            parts.iter().all(|p| p.1.passed),
            parts.iter().map(|(n, o)| format!("{n}: {}", o.detail)).collect::<Vec<_>>().join("; "),
        )
    });
    report(&c, o, t, &mut failures);

    let c = Criterion { id: 10, title: "check is green; injected adjoint fault caught by dot test", budget_secs: 600.0 };
    let (o, t) = props::timed(|| {
        let (clean, clean_text) = run_check(&[]);
        let (faulty, faulty_text) = run_check(&["--inject-adjoint-fault"]);
        let named = faulty_text
            .lines()
            .any(|l| l.contains("failing properties") && l.contains("dot_test"));
        let passed = clean == Some(0) && faulty.is_some_and(|c| c != 0) && named;
        let detail = if passed {
            "clean exit 0; fault exit ≠ 0 naming linop.dot_test".to_string()
        } else {
            format!("clean exit {clean:?}, fault exit {faulty:?}, dot_test named: {named}\n{clean_text}\n{faulty_text}")
        };
        Outcome::new(passed, detail)
    });
    report(&c, o, t, &mut failures);

    if failures.is_empty() {
        println!("acceptance: all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failures:?}");
        ExitCode::FAILURE
    }
}
