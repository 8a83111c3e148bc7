use std::process::{Command, Output};

fn lsqdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsqdiff"))
        .args(args)
        .env_remove("LSQDIFF_SEED")
        .output()
        .expect("spawn lsqdiff")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// CSV rows without the manifest line and without the trailing wall-time column.
fn stable_rows(csv: &str) -> Vec<String> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(lsqdiff(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(lsqdiff(&["bench-solvers", "--m", "ten"]).status.code(), Some(2));
    assert_eq!(lsqdiff(&["bench-solvers", "--cond", "0.5"]).status.code(), Some(2));
    let out = lsqdiff(&["nsm-demo", "--case", "sphere", "--precision", "single"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bench-solvers"));
}

#[test]
fn well_conditioned_bench_is_accurate_and_deterministic() {
    let args = ["bench-solvers", "--cond", "1", "--m", "100", "--n", "10", "--seed", "4"];
    let first = lsqdiff(&args);
    assert!(first.status.success());
    let csv = stdout(&first);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# manifest {"));
    assert_eq!(
        lines.next().unwrap(),
        "solver,m,n,cond,precision,iterations,rel_error,resid_norm,wall_ms"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let rel: f64 = row.split(',').nth(6).unwrap().parse().unwrap();
        assert!(rel <= 1e-8, "{row}");
    }
    let again = lsqdiff(&args);
    assert_eq!(stable_rows(&csv), stable_rows(&stdout(&again)));
}

#[test]
fn environment_seed_is_overridden_by_flag() {
    let run = |env: &str, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_lsqdiff"));
        cmd.args(["bench-solvers", "--m", "40", "--n", "5", "--cond", "10"]).env("LSQDIFF_SEED", env);
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        stable_rows(&stdout(&cmd.output().unwrap()))
    };
    assert_eq!(run("7", Some("3")), run("3", None));
    assert_ne!(run("7", None), run("3", None));
}

#[test]
fn bench_grad_small_grid_validates() {
    let out = lsqdiff(&["bench-grad", "--sizes", "64,128,256", "--kernel", "3", "--repeats", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = stdout(&out);
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 3 * 2 * 3);
    assert!(rows.iter().all(|r| r.split(',').nth(7) == Some("2")));
}

#[test]
fn check_filter_runs_only_matching_suites() {
    let out = lsqdiff(&["check", "--filter", "gp"]);
    assert!(out.status.success());
    let table = stdout(&out);
    let suites: Vec<&str> = table
        .lines()
        .skip(1)
        .filter_map(|l| l.split_whitespace().next())
        .filter(|s| s.contains('.'))
        .collect();
    assert_eq!(suites, ["gp.small"]);
    assert_eq!(lsqdiff(&["check", "--filter", "nothing-matches"]).status.code(), Some(2));
}

#[test]
fn sphere_demo_writes_manifest_and_trajectory() {
    let dir = std::env::temp_dir().join(format!("lsqdiff-cli-{}", std::process::id()));
    let path = dir.join("sphere.json");
    let out = lsqdiff(&["nsm-demo", "--case", "sphere", "--steps", "200", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["manifest"]["subcommand"], "nsm-demo");
    assert_eq!(doc["manifest"]["outputs"][0], path.to_str().unwrap());
    assert_eq!(doc["report"]["trajectory"].as_array().unwrap().len(), 201);
    let last = &doc["report"]["trajectory"][200];
    assert!(last["primal_residual"].as_f64().unwrap() <= 1e-6);
    std::fs::remove_dir_all(dir).ok();
}
