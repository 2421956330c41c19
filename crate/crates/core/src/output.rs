//! CSV dumps and run manifests.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! inputs give byte-identical files. Header layouts are fixed by the
//! `*_header` functions and covered by golden tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::GainSchedule;
use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::simulator::{MonteCarloSummary, TrajectoryRecord};

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

pub fn trajectory_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("x_{i}")));
    h.extend((0..m).map(|j| format!("u_{j}")));
    h.extend(
        ["total_input", "c_t", "mode", "residual", "step_cost"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

/// One row per step `t ∈ [0, T]`. The row at `T` carries the terminal state
/// and cost with mode `terminal` and empty input fields.
pub fn write_trajectory_csv(path: &Path, scenario: &Scenario, traj: &TrajectoryRecord) -> Result<()> {
    let n = scenario.fleet.n_tot();
    let m = scenario.fleet.m_tot();
    let horizon = scenario.horizon();
    let mut w = writer(path)?;
    w.write_record(trajectory_header(n, m))?;
    for t in 0..=horizon {
        let mut row = vec![t.to_string()];
        row.extend(traj.states[t].iter().map(|&v| fmt(v)));
        if t < horizon {
            row.extend(traj.inputs[t].iter().map(|&v| fmt(v)));
            row.push(fmt(traj.inputs[t].sum()));
            row.push(fmt(scenario.schedule.target(t)));
            row.push(scenario.schedule.mode(t).label().to_string());
            row.push(fmt(traj.residuals[t]));
        } else {
            row.extend(std::iter::repeat_n(String::new(), m + 2));
            row.push("terminal".to_string());
            row.push(String::new());
        }
        row.push(fmt(traj.step_costs[t]));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn gains_header(n: usize, m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "mode", "c_t", "q", "s_norm"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..n).map(|i| format!("p_diag_{i}")));
    for i in 0..m {
        h.extend((0..n).map(|j| format!("k_{i}_{j}")));
    }
    h.extend((0..m).map(|i| format!("d_{i}")));
    h
}

/// One row per step `t ∈ [0, T−1]`: mode, target, `q_t`, `‖s_t‖₂`, the
/// diagonal of `P_t`, `K_t` in row-major order and `d_t`.
pub fn write_gains_csv(path: &Path, gains: &GainSchedule) -> Result<()> {
    let n = gains.n_tot();
    let m = gains.m_tot();
    let mut w = writer(path)?;
    w.write_record(gains_header(n, m))?;
    for t in 0..gains.horizon() {
        let mut row = vec![
            t.to_string(),
            gains.modes.mode(t).label().to_string(),
            fmt(gains.modes.target(t)),
            fmt(gains.q[t]),
            fmt(gains.s[t].norm()),
        ];
        row.extend(gains.p[t].diagonal().iter().map(|&v| fmt(v)));
        for i in 0..m {
            row.extend((0..n).map(|j| fmt(gains.k[t][(i, j)])));
        }
        row.extend(gains.d[t].iter().map(|&v| fmt(v)));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub const EIGENVALUE_HEADER: [&str; 2] = ["t", "min_eigenvalue"];

/// Smallest eigenvalue of `P_t` for `t ∈ [0, T]`.
pub fn write_eigenvalues_csv(path: &Path, eigenvalues: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(EIGENVALUE_HEADER)?;
    for (t, &v) in eigenvalues.iter().enumerate() {
        w.write_record([t.to_string(), fmt(v)])?;
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 2] = ["metric", "value"];

pub fn write_summary_csv(path: &Path, rows: &[(&str, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for (k, v) in rows {
        w.write_record([k.to_string(), fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Metric rows of a Monte Carlo summary.
pub fn summary_rows(s: &MonteCarloSummary, predicted_cost: f64) -> Vec<(&'static str, f64)> {
    vec![
        ("n_paths", s.n_paths as f64),
        ("mean_cost", s.mean_cost),
        ("cost_std_error", s.cost_std_error),
        ("predicted_cost", predicted_cost),
        ("max_abs_hard_residual", s.max_abs_hard_residual),
    ]
}

pub fn mean_trajectory_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("mean_x_{i}")));
    h.extend((0..m).map(|j| format!("mean_u_{j}")));
    h.extend(
        [
            "mean_total_input",
            "mean_abs_residual",
            "mean_step_cost",
            "alpha_mean_soc",
            "beta_mean_soc",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

/// Path-averaged trajectory, one row per `t ∈ [0, T]`. Input and residual
/// fields are empty at `T`; class columns are empty without class labels.
pub fn write_mean_trajectory_csv(path: &Path, scenario: &Scenario, s: &MonteCarloSummary) -> Result<()> {
    let n = scenario.fleet.n_tot();
    let m = scenario.fleet.m_tot();
    let horizon = scenario.horizon();
    let mut w = writer(path)?;
    w.write_record(mean_trajectory_header(n, m))?;
    let class_cell = |v: &Vec<f64>, t: usize| v.get(t).map(|&x| fmt(x)).unwrap_or_default();
    for t in 0..=horizon {
        let mut row = vec![t.to_string()];
        row.extend(s.mean_states[t].iter().map(|&v| fmt(v)));
        if t < horizon {
            row.extend(s.mean_inputs[t].iter().map(|&v| fmt(v)));
            row.push(fmt(s.mean_inputs[t].sum()));
            row.push(fmt(s.mean_abs_residual[t]));
        } else {
            row.extend(std::iter::repeat_n(String::new(), m + 2));
        }
        row.push(fmt(s.mean_step_costs[t]));
        row.push(class_cell(&s.alpha_mean_soc, t));
        row.push(class_cell(&s.beta_mean_soc, t));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub const CLASS_SOC_HEADER: [&str; 3] = ["t", "alpha_mean_soc", "beta_mean_soc"];

pub fn write_class_soc_csv(path: &Path, alpha: &[f64], beta: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(CLASS_SOC_HEADER)?;
    for t in 0..alpha.len().max(beta.len()) {
        let cell = |v: &[f64]| v.get(t).map(|&x| fmt(x)).unwrap_or_default();
        w.write_record([t.to_string(), cell(alpha), cell(beta)])?;
    }
    w.flush()?;
    Ok(())
}

pub const TIMING_HEADER: [&str; 6] = ["solver", "horizon", "agents", "reps", "median_seconds", "min_seconds"];

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub solver: &'static str,
    pub horizon: usize,
    pub agents: usize,
    pub reps: usize,
    pub median_seconds: f64,
    pub min_seconds: f64,
}

pub fn write_timing_csv(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TIMING_HEADER)?;
    for r in rows {
        w.write_record([
            r.solver.to_string(),
            r.horizon.to_string(),
            r.agents.to_string(),
            r.reps.to_string(),
            fmt(r.median_seconds),
            fmt(r.min_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

/// Provenance record written as `manifest.json` next to every command's
/// outputs. Output paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub parameters: BTreeMap<String, String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub version: String,
    pub outputs: Vec<OutputEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            scenario_path: None,
            scenario_sha256: None,
            seed: None,
            parameters: BTreeMap::new(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
        }
    }

    pub fn with_scenario(mut self, path: &Path) -> Result<Self> {
        self.scenario_sha256 = Some(sha256_file(path)?);
        self.scenario_path = Some(path.to_path_buf());
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    /// Records `file` (relative to `dir`) with its hash.
    pub fn add_output(&mut self, dir: &Path, file: &str) -> Result<()> {
        let sha256 = sha256_file(&dir.join(file))?;
        self.outputs.push(OutputEntry {
            file: file.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("cannot serialize manifest: {e}")))?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
