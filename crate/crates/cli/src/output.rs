//! On-disk artifacts written by `train` and `ablate`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use sacn::{save_checkpoint, AblationRow, ExperimentReport, TrainConfig};

use crate::CliError;

/// Version tag of `report.json`.
pub const REPORT_FORMAT: &str = "sacn-report/1";

pub fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

/// Writes one JSON document per item, newline-terminated.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_error(path, e))?;
        w.write_all(b"\n").map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| io_error(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

/// Per-seed metrics, selection log and best-validation checkpoint under
/// `dir/seed-{s}/`.
pub fn write_runs(dir: &Path, report: &ExperimentReport, config: &TrainConfig) -> Result<(), CliError> {
    let hash = config.config_hash();
    for (run, params) in report.runs.iter().zip(&report.params) {
        let seed_dir = dir.join(format!("seed-{}", run.seed));
        create_dir(&seed_dir)?;
        write_jsonl(&seed_dir.join("metrics.jsonl"), &run.metrics)?;
        write_jsonl(&seed_dir.join("selection.jsonl"), &run.selection_log)?;
        save_checkpoint(seed_dir.join("checkpoint.bin"), params, &hash)?;
    }
    Ok(())
}

#[derive(Serialize)]
pub struct TrainReport<'a> {
    pub format: &'static str,
    pub command: &'static str,
    pub bundle: String,
    pub config: &'a TrainConfig,
    pub config_hash: String,
    pub experiment: &'a ExperimentReport,
}

#[derive(Serialize)]
pub struct AblationArmReport<'a> {
    pub arm: &'a str,
    pub config: TrainConfig,
    pub experiment: &'a ExperimentReport,
}

#[derive(Serialize)]
pub struct AblationReport<'a> {
    pub format: &'static str,
    pub command: &'static str,
    pub bundle: String,
    pub config: &'a TrainConfig,
    pub config_hash: String,
    pub arms: Vec<AblationArmReport<'a>>,
}

pub fn write_ablation_csv(path: &Path, rows: &[&AblationRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}
