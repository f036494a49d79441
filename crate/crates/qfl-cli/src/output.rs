//! Result files.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use qfl_core::data::format_f64;
use qfl_core::fed::{RoundRecord, Summary};
use serde_json::{json, Map, Value};

use crate::{CliError, RunConfig};

fn csv_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Column names of rounds.csv for `devices` devices. `wall_clock_seconds`
/// is always last.
pub fn rounds_header(devices: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "round",
        "contributors",
        "mean_device_train_accuracy",
        "mean_device_test_accuracy",
        "prediction_val_accuracy",
        "prediction_val_loss",
        "prediction_test_accuracy",
        "prediction_test_loss",
        "gplus_val_accuracy",
        "gplus_val_loss",
        "gplus_test_accuracy",
        "gplus_test_loss",
        "server_score",
    ]
    .map(String::from)
    .to_vec();
    for k in 0..devices {
        h.push(format!("device{k}_train_accuracy"));
        h.push(format!("device{k}_test_accuracy"));
        h.push(format!("device{k}_delivered"));
    }
    h.push("wall_clock_seconds".into());
    h
}

pub fn write_rounds_csv(path: &Path, records: &[RoundRecord]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| csv_err(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let devices = records.first().map_or(0, |r| r.devices.len());
    w.write_record(rounds_header(devices)).map_err(|e| csv_err(path, e))?;
    for r in records {
        let mut row = vec![r.round.to_string(), r.contributors.to_string()];
        row.extend(
            [
                r.mean_device_train_accuracy(),
                r.mean_device_test_accuracy(),
                r.prediction_val_accuracy,
                r.prediction_val_loss,
                r.prediction_test_accuracy,
                r.prediction_test_loss,
                r.gplus_val_accuracy,
                r.gplus_val_loss,
                r.gplus_test_accuracy,
                r.gplus_test_loss,
                r.server_score,
            ]
            .map(format_f64),
        );
        for d in &r.devices {
            row.push(format_f64(d.train_accuracy));
            row.push(format_f64(d.test_accuracy));
            row.push(u8::from(d.delivered).to_string());
        }
        row.push(format_f64(r.wall_clock_seconds));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}

pub fn summary_json(cfg: &RunConfig, summary: &Summary, rounds: usize) -> Value {
    let mut metrics = Map::new();
    for (name, m) in &summary.metrics {
        metrics.insert(name.clone(), json!({ "avg": m.avg, "final": m.final_value, "max": m.max }));
    }
    json!({
        "name": cfg.name,
        "seed": cfg.seed,
        "rounds": rounds,
        "devices": cfg.devices,
        "metrics": metrics,
        "top_device": summary.top_device,
    })
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut f = File::create(path).map_err(|e| csv_err(path, e))?;
    let text = serde_json::to_string_pretty(value).expect("json value serialises");
    writeln!(f, "{text}").map_err(|e| csv_err(path, e))
}
