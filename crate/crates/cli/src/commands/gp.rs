use serde::Serialize;

use lsqdiff::gp::{calibrate, make_dataset, CalibrationResult, CalibrationSettings, Method};
use lsqdiff::par;

use crate::args::{Common, GpCalibrateArgs, MethodArg};
use crate::manifest::{write_csv, write_json, RunManifest};
use crate::props::median;
use crate::CliError;

pub const HEADER: &str = "method,seed,sigma,ell,lambda,test_rmse,wall_ms";

pub fn csv_row(r: &CalibrationResult) -> String {
    format!(
        "{},{},{:e},{:e},{:e},{:e},{:.1}",
        r.method, r.seed, r.hyper.sigma, r.hyper.ell, r.hyper.lambda, r.test_rmse, r.wall_ms
    )
}

#[derive(Debug, Serialize)]
struct PlotSeries {
    method: Method,
    seed: u64,
    /// `[x, y, mean]` on the test inputs, sorted by x.
    points: Vec<[f64; 3]>,
}

pub fn run(common: &Common, args: &GpCalibrateArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    if args.seeds == 0 || args.features == 0 || !(args.lr > 0.0) {
        return Err(CliError::Usage("--seeds, --features and --lr must be positive".into()));
    }
    let methods: &[Method] = match args.method {
        MethodArg::Lml => &[Method::Lml],
        MethodArg::Pred => &[Method::Pred],
        MethodArg::Both => &[Method::Pred, Method::Lml],
    };
    let settings = CalibrationSettings {
        steps: args.steps,
        lr: args.lr,
        features: args.features,
        ..CalibrationSettings::default()
    };
    let seeds: Vec<u64> = (common.seed..common.seed + args.seeds).collect();
    let runs = par::map(&seeds, |&seed| -> lsqdiff::Result<Vec<(CalibrationResult, PlotSeries)>> {
        let data = make_dataset(seed);
        methods
            .iter()
            .map(|&m| {
                let r = calibrate(m, &data, &settings, seed)?;
                let points = r.plot_data(&data)?.into_iter().map(|(x, y, f)| [x, y, f]).collect();
                Ok((
                    r,
                    PlotSeries {
                        method: m,
                        seed,
                        points,
                    },
                ))
            })
            .collect()
    });
    let mut results = Vec::new();
    let mut plots = Vec::new();
    for run in runs {
        for (r, p) in run? {
            results.push(r);
            plots.push(p);
        }
    }
    for &m in methods {
        let mut rmse: Vec<f64> = results.iter().filter(|r| r.method == m).map(|r| r.test_rmse).collect();
        eprintln!("{m}: median test RMSE {:.5} over {} seeds", median(&mut rmse), rmse.len());
    }
    let rows: Vec<String> = results.iter().map(csv_row).collect();
    write_csv(manifest, common.out.as_ref(), HEADER, &rows)?;
    if let Some(path) = &args.plot_out {
        write_json(manifest, Some(path), "series", &plots)?;
    }
    Ok(())
}
