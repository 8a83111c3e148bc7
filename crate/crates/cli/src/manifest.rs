use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::args::Cli;
use crate::CliError;

/// Provenance of one CLI invocation, embedded in every output it writes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub flags: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub git: Option<String>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub outputs: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(cli: &Cli) -> Self {
        let flags = serde_json::to_value(cli).unwrap_or(serde_json::Value::Null);
        let subcommand = flags
            .get("command")
            .and_then(|c| c.get("subcommand"))
            .and_then(|s| s.as_str())
            .unwrap_or("unknown")
            .to_string();
        Self {
            subcommand,
            flags,
            seed: cli.common.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            git: option_env!("LSQDIFF_GIT_REV").map(str::to_string),
            started_unix: now(),
            finished_unix: None,
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished_unix = Some(now());
    }

    pub fn note_output(&mut self, path: Option<&Path>) {
        self.outputs
            .push(path.map_or_else(|| "-".to_string(), |p| p.display().to_string()));
    }

    /// Single-line comment header for CSV outputs.
    pub fn header_line(&self) -> String {
        format!("# manifest {}", serde_json::to_string(self).unwrap_or_default())
    }
}

/// Writes `body` to `path`, or to standard output when `path` is `None`.
pub fn write_output(path: Option<&PathBuf>, body: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, body)?;
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(body.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

/// Finishes the manifest and writes a CSV whose first line is the manifest header.
pub fn write_csv(
    manifest: &mut RunManifest,
    path: Option<&PathBuf>,
    header: &str,
    rows: &[String],
) -> Result<(), CliError> {
    manifest.note_output(path.map(PathBuf::as_path));
    manifest.finish();
    let mut body = manifest.header_line();
    body.push('\n');
    body.push_str(header);
    body.push('\n');
    for row in rows {
        body.push_str(row);
        body.push('\n');
    }
    write_output(path, &body)
}

/// Finishes the manifest and writes `{"manifest": …, "<key>": payload}`.
pub fn write_json<T: Serialize>(
    manifest: &mut RunManifest,
    path: Option<&PathBuf>,
    key: &str,
    payload: &T,
) -> Result<(), CliError> {
    manifest.note_output(path.map(PathBuf::as_path));
    manifest.finish();
    let mut doc = serde_json::Map::new();
    doc.insert("manifest".into(), serde_json::to_value(&*manifest)?);
    doc.insert(key.into(), serde_json::to_value(payload)?);
    let mut body = serde_json::to_string_pretty(&doc)?;
    body.push('\n');
    write_output(path, &body)
}
