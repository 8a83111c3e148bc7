use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lsqdiff::nullspace::DemoCase;
use lsqdiff::solvers::Precision;

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "lsqdiff", version, about = "Differentiable least-squares experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Base RNG seed.
    #[arg(long, global = true, env = "LSQDIFF_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for seed-level parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Vector arithmetic precision (only `bench-solvers` supports single).
    #[arg(long, global = true, value_parser = parse_precision)]
    pub precision: Option<Precision>,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: lsqdiff::Error| e.to_string())
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "subcommand")]
pub enum Command {
    /// LSMR versus CGLS on seeded ill-conditioned problems.
    BenchSolvers(BenchSolversArgs),
    /// Adjoint gradients on convolution problems: FD agreement, solve counts, timing.
    BenchGrad(BenchGradArgs),
    /// Gaussian-process calibration by marginal likelihood and by predictive fit.
    GpCalibrate(GpCalibrateArgs),
    /// Null-space method toy problems.
    NsmDemo(NsmDemoArgs),
    /// Run the invariant suites.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchSolversArgs {
    #[arg(long, value_delimiter = ',', default_value = "10000")]
    pub m: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "8388608")]
    pub cond: Vec<f64>,
    /// Stopping tolerance for both solvers.
    #[arg(long, default_value_t = 1e-14)]
    pub tol: f64,
    /// LSMR reorthogonalization window: a count, `full`, or `none`.
    #[arg(long, default_value = "full", value_parser = parse_window)]
    pub reorth: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Window {
    None,
    Full,
    Last(usize),
}

impl Window {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            Window::None => 0,
            Window::Full => n,
            Window::Last(k) => k,
        }
    }
}

fn parse_window(s: &str) -> Result<Window, String> {
    match s {
        "none" => Ok(Window::None),
        "full" => Ok(Window::Full),
        _ => s
            .parse()
            .map(Window::Last)
            .map_err(|_| format!("expected a count, `full` or `none`, got {s:?}")),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchGradArgs {
    /// Signal lengths of the square convolution operators.
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096")]
    pub sizes: Vec<usize>,
    /// Kernel length (number of operator parameters).
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Timing repetitions; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Lml,
    Pred,
    Both,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GpCalibrateArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    pub method: MethodArg,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = lsqdiff::gp::DEFAULT_FEATURES)]
    pub features: usize,
    /// Where to write `(x, y, mean)` plot data as JSON.
    #[arg(long)]
    pub plot_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NsmDemoArgs {
    #[arg(long, value_parser = parse_case)]
    pub case: DemoCase,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
}

fn parse_case(s: &str) -> Result<DemoCase, String> {
    s.parse().map_err(|e: lsqdiff::Error| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CheckArgs {
    /// Run only suites whose name contains this string.
    #[arg(long)]
    pub filter: Option<String>,
    /// Perturb operator adjoints to exercise failure reporting.
    #[arg(long, hide = true)]
    pub inject_adjoint_fault: bool,
}
