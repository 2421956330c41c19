use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use super::{ConstraintMode, ConstraintSchedule};
use crate::error::{Error, Result};

/// Hourly excess generation `c_t` in kW.
#[derive(Clone, Debug, PartialEq)]
pub struct SolarProfile {
    samples: Vec<f64>,
}

impl SolarProfile {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(t) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("solar sample {t} is not finite")));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reads one named column of kW values. Blank lines are skipped; any
    /// non-numeric cell is an error.
    pub fn from_csv_reader<R: Read>(reader: R, column: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let idx = headers.iter().position(|h| h == column).ok_or_else(|| {
            Error::Validation(format!(
                "solar CSV has no column '{column}' (found: {})",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })?;
        let mut samples = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let cell = rec.get(idx).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                Error::Validation(format!(
                    "solar CSV data row {}: column '{column}' is not numeric: '{cell}'",
                    row + 1
                ))
            })?;
            samples.push(v);
        }
        Self::new(samples)
    }

    pub fn from_csv(path: &Path, column: &str) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, column)
    }

    /// First `horizon` samples; errors if the profile is shorter.
    pub fn truncated(&self, horizon: usize) -> Result<Self> {
        if self.samples.len() < horizon {
            return Err(Error::Validation(format!(
                "solar profile has {} samples but the horizon is {horizon}",
                self.samples.len()
            )));
        }
        Ok(Self {
            samples: self.samples[..horizon].to_vec(),
        })
    }
}

/// Half-sine generation bump over the daylight window `[start, end)`,
/// peaking at `peak_kw` at the window midpoint and zero elsewhere.
pub fn synthetic_solar(horizon: usize, peak_kw: f64, daylight: (usize, usize)) -> Result<SolarProfile> {
    let (start, end) = daylight;
    if start >= end || end > horizon {
        return Err(Error::InvalidWindow {
            start,
            end,
            horizon,
        });
    }
    if !(peak_kw.is_finite() && peak_kw >= 0.0) {
        return Err(Error::Validation(format!("peak power must be nonnegative, got {peak_kw}")));
    }
    let width = (end - start) as f64;
    let samples = (0..horizon)
        .map(|t| {
            if (start..end).contains(&t) {
                peak_kw * (PI * (t - start) as f64 / width).sin()
            } else {
                0.0
            }
        })
        .collect();
    SolarProfile::new(samples)
}

/// Hard constraint wherever the profile is nonzero, `off_mode` elsewhere.
/// Targets are copied from the profile at every step.
pub fn schedule_from_profile(
    profile: &SolarProfile,
    off_mode: ConstraintMode,
) -> Result<ConstraintSchedule> {
    let modes = profile
        .samples()
        .iter()
        .map(|&c| if c != 0.0 { ConstraintMode::Hard } else { off_mode })
        .collect();
    ConstraintSchedule::new(modes, profile.samples().to_vec())
}

/// Hard steps whose target lies outside the aggregate input range
/// `[N·u_min, N·u_max]`. The controller does not enforce these bounds.
pub fn capacity_violations(
    schedule: &ConstraintSchedule,
    n_agents: usize,
    u_min: f64,
    u_max: f64,
) -> Vec<usize> {
    let lo = n_agents as f64 * u_min;
    let hi = n_agents as f64 * u_max;
    schedule
        .hard_steps()
        .filter(|&t| {
            let c = schedule.target(t);
            c < lo || c > hi
        })
        .collect()
}
