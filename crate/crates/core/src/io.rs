//! File formats shared by the CLI and the C API.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::inverse::{Design, ScenarioKind, ScenarioProvenance, ScenarioSet};
use crate::optimizer::{SweepEntry, TraceRow};
use crate::structural::{ExtractionMode, FrfMatrix, SensorLabel};

/// `sensor_id,node,axis,t_1..t_n`, one row per sensor.
pub fn write_frf_csv(path: &Path, frf: &FrfMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = frf.n_params();
    let mut header = vec!["sensor_id".to_string(), "node".into(), "axis".into()];
    header.extend((1..=p).map(|k| format!("t_{k}")));
    w.write_record(&header)?;
    let t = frf.entries();
    for (i, label) in frf.labels().iter().enumerate() {
        let mut rec = vec![i.to_string(), label.node.to_string(), label.axis.clone()];
        rec.extend((0..p).map(|k| format!("{:e}", t[(i, k)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an FRF written by [`write_frf_csv`]. Frequency and extraction mode
/// are not part of the format and come back as 0 and `real_part`.
pub fn read_frf_csv(path: &Path) -> Result<FrfMatrix> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() < 4
        || &headers[0] != "sensor_id"
        || &headers[1] != "node"
        || &headers[2] != "axis"
    {
        return Err(OedError::InvalidConfig(format!(
            "{}: expected header sensor_id,node,axis,t_1..t_n",
            path.display()
        )));
    }
    let p = headers.len() - 3;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| {
            OedError::InvalidConfig(format!(
                "{}: data row {}: bad {what}",
                path.display(),
                line + 1
            ))
        };
        let node = rec[1].trim().parse::<usize>().map_err(|_| bad("node"))?;
        labels.push(SensorLabel {
            node,
            axis: rec[2].to_string(),
        });
        for k in 0..p {
            values.push(
                rec[3 + k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad("matrix entry"))?,
            );
        }
    }
    let n = labels.len();
    FrfMatrix::new(
        DMatrix::from_row_slice(n, p, &values),
        0.0,
        ExtractionMode::RealPart,
        labels,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub weights: Vec<f64>,
    pub costs: Vec<f64>,
    pub budget: f64,
    pub binary: bool,
    pub criterion: String,
    /// `null` when the design is ill-posed under its criterion.
    #[serde(deserialize_with = "null_as_infinity")]
    pub criterion_value: f64,
    pub gamma: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub fallback: bool,
    #[serde(default)]
    pub label: String,
}

fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl DesignFile {
    pub fn design(&self) -> Result<Design> {
        Design::new(self.weights.clone(), self.costs.clone(), self.budget)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| OedError::InvalidConfig(format!("{}: {e}", path.display())))
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iter",
        "objective",
        "criterion",
        "penalty",
        "step",
        "proj_grad_norm",
    ])?;
    for r in trace {
        w.write_record([
            r.iter.to_string(),
            format!("{:e}", r.objective),
            format!("{:e}", r.criterion),
            format!("{:e}", r.penalty),
            format!("{:e}", r.step),
            format!("{:e}", r.proj_grad_norm),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, entries: &[SweepEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "gamma",
        "objective",
        "criterion",
        "binary_distance",
        "feasible",
        "binary",
        "snapped_criterion",
        "iterations",
        "converged",
    ])?;
    for e in entries {
        w.write_record([
            format!("{:e}", e.gamma),
            format!("{:e}", e.objective),
            format!("{:e}", e.criterion),
            format!("{:e}", e.binary_distance),
            e.feasible.to_string(),
            e.binary.to_string(),
            e.snapped_criterion
                .map(|v| format!("{v:e}"))
                .unwrap_or_default(),
            e.iterations.to_string(),
            e.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `scenario_id,sensor_id,value`. Only entries different from 1 are
/// written; missing entries are survivals.
pub fn write_scenarios_csv(path: &Path, set: &ScenarioSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "scenario_id,sensor_id,value")?;
    for (j, e) in set.entries().iter().enumerate() {
        for (i, v) in e.iter().enumerate() {
            if *v != 1.0 {
                writeln!(w, "{j},{i},{v}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub kind: ScenarioKind,
    pub provenance: ScenarioProvenance,
    pub n_scenarios: usize,
    pub n_sensors: usize,
    pub failure_frequency: Vec<f64>,
}

impl ScenarioSummary {
    pub fn of(set: &ScenarioSet) -> Self {
        Self {
            kind: set.kind(),
            provenance: set.provenance().clone(),
            n_scenarios: set.len(),
            n_sensors: set.n_sensors(),
            failure_frequency: set.failure_frequency(),
        }
    }
}

/// Reads a sparse scenario CSV; `n_scenarios` covers trailing all-ones
/// scenarios that have no rows.
pub fn read_scenarios_csv(path: &Path, summary: &ScenarioSummary) -> Result<ScenarioSet> {
    let mut entries = vec![vec![1.0; summary.n_sensors]; summary.n_scenarios];
    let mut r = csv::Reader::from_path(path)?;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || {
            OedError::InvalidConfig(format!(
                "{}: data row {}: malformed entry",
                path.display(),
                line + 1
            ))
        };
        let j: usize = rec[0].trim().parse().map_err(|_| bad())?;
        let i: usize = rec[1].trim().parse().map_err(|_| bad())?;
        let v: f64 = rec[2].trim().parse().map_err(|_| bad())?;
        if j >= entries.len() || i >= summary.n_sensors {
            return Err(bad());
        }
        entries[j][i] = v;
    }
    if entries.is_empty() {
        return Err(OedError::InvalidConfig(format!(
            "{}: scenario set is empty",
            path.display()
        )));
    }
    ScenarioSet::new(
        summary.kind,
        summary.n_sensors,
        entries,
        summary.provenance.clone(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub dry_run: bool,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(command: &str, config_hash: String, master_seed: u64, dry_run: bool) -> Self {
        Self {
            command: command.to_string(),
            config_hash,
            master_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: unix_now(),
            finished_unix: 0,
            dry_run,
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix = unix_now();
        let path = dir.join(format!("manifest_{}.json", self.command));
        self.outputs.push(path.clone());
        write_json(&path, &self)?;
        Ok(path)
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
