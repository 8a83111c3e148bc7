use lsqdiff::nullspace::{commutant_demo, sparsity_demo, sphere_demo, DemoCase, DemoConfig};

use crate::args::{Common, NsmDemoArgs};
use crate::manifest::{write_json, RunManifest};
use crate::CliError;

pub fn run(common: &Common, args: &NsmDemoArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    if !(args.eta > 0.0) || !(args.gamma > 0.0) {
        return Err(CliError::Usage("--eta and --gamma must be positive".into()));
    }
    let cfg = DemoConfig {
        eta: args.eta,
        gamma: args.gamma,
        steps: args.steps,
        seed: common.seed,
    };
    let report = match args.case {
        DemoCase::Sphere => sphere_demo(&cfg)?,
        DemoCase::Sparsity => sparsity_demo(&cfg)?,
        DemoCase::Commutant => commutant_demo(&cfg)?,
    };
    let last = report.final_record();
    eprintln!(
        "{:?}: final primal residual {:.3e}, stationarity {:.3e}",
        args.case, last.primal_residual, last.stationarity_residual
    );
    for b in &report.baselines {
        eprintln!("  baseline {}: primal residual {:.3e}", b.name, b.final_primal_residual);
    }
    write_json(manifest, common.out.as_ref(), "report", &report)
}
