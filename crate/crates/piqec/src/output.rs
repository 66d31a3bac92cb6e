//! CSV, JSON, and JSON-lines writers for experiment outputs.
//!
//! Aggregation upstream is reduction-order deterministic, so identical
//! `(config, seed)` pairs produce byte-identical files at any thread count.

use std::io::Write;
use std::path::Path;

use crate::dynamics::{CurvePoint, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::recovery::MemoryResult;
use crate::sensing::SensingResult;

/// Curve table of a memory run.
pub fn write_memory_csv(path: &Path, result: &MemoryResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "time",
        "curve_id",
        "mean_fidelity",
        "stderr",
        "mean_J",
        "mean_N",
        "teleports_cumulative",
    ])
    .map_err(csv_err)?;
    for curve in &result.curves {
        for p in &curve.points {
            w.write_record([
                format_f64(p.t),
                curve.curve.id().to_string(),
                format_f64(p.mean_fidelity),
                format_f64(p.stderr),
                format_f64(p.mean_j),
                format_f64(p.mean_n),
                format_f64(p.teleports_cumulative),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Curve table of a sensing run.
pub fn write_sensing_csv(path: &Path, result: &SensingResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["time", "curve_id", "mean_infidelity", "stderr"])
        .map_err(csv_err)?;
    for curve in &result.curves {
        for p in &curve.points {
            w.write_record([
                format_f64(p.t),
                curve.id.clone(),
                format_f64(p.mean_infidelity),
                format_f64(p.stderr),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Generic aggregated curve.
pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["time", "mean", "stderr", "n_alive_trajectories"])
        .map_err(csv_err)?;
    for p in points {
        w.write_record([
            format_f64(p.t),
            format_f64(p.mean),
            format_f64(p.stderr),
            p.n_alive.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Raw per-trajectory logs, one JSON object per line (opt-in, large).
pub fn write_trajectory_jsonl(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Config(format!("serializing trajectory record: {e}")))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Writes the resolved configuration and run metadata next to the outputs.
pub fn write_provenance(dir: &Path, resolved_config_toml: &str, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.resolved.toml"), resolved_config_toml)?;
    let meta = serde_json::json!({
        "crate": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
    });
    std::fs::write(
        dir.join("provenance.json"),
        serde_json::to_string_pretty(&meta).expect("static json"),
    )?;
    Ok(())
}

// Shortest round-trip float formatting: deterministic and exact.
fn format_f64(v: f64) -> String {
    format!("{v}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("writing csv: {e}"))
}
