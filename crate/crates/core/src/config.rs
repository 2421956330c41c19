//! TOML scenario files for the battery fleet.
//!
//! ```toml
//! agents = 50
//! seed = 2024
//! horizon = 24
//!
//! [weights]
//! q = 1.0
//! q_terminal = 1.0
//! r = 0.01
//!
//! [fleet]                      # optional, defaults shown
//! a_min = 0.96
//! a_max = 0.99
//! b = 1.0
//! noise_variance = 3.0
//! capacity_kwh = 80.0
//! initial_soc = [0.4, 0.6]
//! class_targets = [0.8, 0.4]
//!
//! [schedule]
//! mode = "switched"            # hard | intermittent | switched | none
//! eta = 1.0                    # switched only
//!
//! [solar]
//! source = "synthetic"
//! peak_kw = 150.0
//! daylight = [6, 18]
//! # or: source = "csv", path = "solar.csv", column = "kw"
//!
//! [bounds]                     # optional, per-agent kW, warning only
//! u_min = -10.0
//! u_max = 10.0
//! ```
//!
//! A relative CSV path is resolved against the directory of the scenario file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::demo::{fleet_scenario, Strategy};
use crate::error::{Error, Result};
use crate::model::{capacity_violations, synthetic_solar, FleetParams, Scenario, SolarProfile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub agents: usize,
    pub seed: u64,
    pub horizon: usize,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub fleet: FleetConfig,
    pub schedule: ScheduleConfig,
    pub solar: SolarConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub q: f64,
    pub q_terminal: f64,
    pub r: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        let p = FleetParams::default();
        Self {
            q: p.q,
            q_terminal: p.q_terminal,
            r: p.r,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub a_min: f64,
    pub a_max: f64,
    pub b: f64,
    pub noise_variance: f64,
    pub capacity_kwh: f64,
    pub initial_soc: (f64, f64),
    pub class_targets: (f64, f64),
}

impl Default for FleetConfig {
    fn default() -> Self {
        let p = FleetParams::default();
        Self {
            a_min: p.a_min,
            a_max: p.a_max,
            b: p.b,
            noise_variance: p.noise_variance,
            capacity_kwh: p.capacity_kwh,
            initial_soc: p.initial_soc,
            class_targets: p.class_targets,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Hard,
    Intermittent,
    Switched,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub mode: ScheduleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum SolarConfig {
    Synthetic { peak_kw: f64, daylight: (usize, usize) },
    Csv { path: PathBuf, column: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub u_min: f64,
    pub u_max: f64,
}

/// A scenario file turned into a solvable problem.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub params: FleetParams,
    pub strategy: Strategy,
    pub profile: SolarProfile,
    /// Hard steps whose target exceeds the aggregate bounds.
    pub capacity_warnings: Vec<usize>,
}

impl ScenarioConfig {
    /// Parses TOML text; `origin` is only used in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable in TOML")
    }

    pub fn params(&self) -> FleetParams {
        FleetParams {
            a_min: self.fleet.a_min,
            a_max: self.fleet.a_max,
            b: self.fleet.b,
            noise_variance: self.fleet.noise_variance,
            capacity_kwh: self.fleet.capacity_kwh,
            initial_soc: self.fleet.initial_soc,
            class_targets: self.fleet.class_targets,
            q: self.weights.q,
            q_terminal: self.weights.q_terminal,
            r: self.weights.r,
        }
    }

    pub fn strategy(&self) -> Result<Strategy> {
        let eta = self.schedule.eta;
        match (self.schedule.mode, eta) {
            (ScheduleKind::Switched, Some(eta)) if eta.is_finite() && eta >= 0.0 => {
                Ok(Strategy::Switched { eta })
            }
            (ScheduleKind::Switched, Some(eta)) => Err(Error::Validation(format!(
                "schedule.eta must be a nonnegative number, got {eta}"
            ))),
            (ScheduleKind::Switched, None) => Err(Error::Validation(
                "schedule.eta is required when schedule.mode = \"switched\"".into(),
            )),
            (kind, Some(_)) => Err(Error::Validation(format!(
                "schedule.eta only applies to mode \"switched\", not {kind:?}"
            ))),
            (ScheduleKind::Hard, None) => Ok(Strategy::Hard),
            (ScheduleKind::Intermittent, None) => Ok(Strategy::Intermittent),
            (ScheduleKind::None, None) => Ok(Strategy::Unconstrained),
        }
    }

    /// Solar profile of length `horizon`. `base_dir` anchors relative paths.
    pub fn profile(&self, base_dir: &Path) -> Result<SolarProfile> {
        match &self.solar {
            SolarConfig::Synthetic { peak_kw, daylight } => {
                synthetic_solar(self.horizon, *peak_kw, *daylight)
            }
            SolarConfig::Csv { path, column } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                SolarProfile::from_csv(&full, column)?.truncated(self.horizon)
            }
        }
    }

    /// Builds the scenario. Capacity problems are logged and returned, not
    /// treated as errors.
    pub fn build(&self, base_dir: &Path) -> Result<LoadedScenario> {
        if self.horizon == 0 {
            return Err(Error::Validation("empty horizon (T must be at least 1)".into()));
        }
        if self.agents == 0 {
            return Err(Error::Validation("agents must be at least 1".into()));
        }
        let params = self.params();
        params.validate()?;
        let strategy = self.strategy()?;
        let profile = self.profile(base_dir)?;
        let scenario = fleet_scenario(&params, self.agents, self.seed, &profile, strategy)?;
        let capacity_warnings = match &self.bounds {
            Some(b) => {
                if !(b.u_min <= b.u_max) {
                    return Err(Error::Validation(format!(
                        "bounds.u_min ({}) exceeds bounds.u_max ({})",
                        b.u_min, b.u_max
                    )));
                }
                capacity_violations(&scenario.schedule, self.agents, b.u_min, b.u_max)
            }
            None => Vec::new(),
        };
        for &t in &capacity_warnings {
            log::warn!(
                "step {t}: required total power {:.3} kW is outside the aggregate range of the fleet",
                scenario.schedule.target(t)
            );
        }
        Ok(LoadedScenario {
            scenario,
            params,
            strategy,
            profile,
            capacity_warnings,
        })
    }
}

/// Reads and builds a scenario file.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let cfg = ScenarioConfig::from_path(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    cfg.build(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
agents = 4
seed = 3
horizon = 24

[weights]
q = 1.0
q_terminal = 2.0
r = 0.01

[schedule]
mode = "switched"
eta = 1.0

[solar]
source = "synthetic"
peak_kw = 10.0
daylight = [6, 18]

[bounds]
u_min = -1.0
u_max = 2.0
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ScenarioConfig::parse(EXAMPLE, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.fleet, FleetConfig::default());
        assert_eq!(cfg.strategy().unwrap(), Strategy::Switched { eta: 1.0 });
        let loaded = cfg.build(Path::new(".")).unwrap();
        assert_eq!(loaded.scenario.horizon(), 24);
        assert_eq!(loaded.scenario.fleet.n_agents(), 4);
        assert_eq!(loaded.scenario.cost.q_terminal[(0, 0)], 2.0);
        // 4 agents at most 2 kW each cannot absorb the 10 kW midday peak
        assert!(loaded.capacity_warnings.contains(&12));
        assert!(!loaded.capacity_warnings.contains(&7));
    }

    #[test]
    fn round_trip() {
        let cfg = ScenarioConfig::parse(EXAMPLE, Path::new("x.toml")).unwrap();
        let again = ScenarioConfig::parse(&cfg.to_toml(), Path::new("y.toml")).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_field_is_named() {
        let bad = EXAMPLE.replace("q_terminal", "q_final");
        let err = ScenarioConfig::parse(&bad, Path::new("x.toml")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("q_final"), "{err}");
    }

    #[test]
    fn wrong_type_is_reported_with_line() {
        let bad = EXAMPLE.replace("agents = 4", "agents = \"four\"");
        let err = ScenarioConfig::parse(&bad, Path::new("x.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("agents") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn empty_horizon() {
        let cfg = ScenarioConfig::parse(&EXAMPLE.replace("horizon = 24", "horizon = 0"), Path::new("x"))
            .unwrap();
        let err = cfg.build(Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("empty horizon"));
    }

    #[test]
    fn switched_requires_eta() {
        let cfg = ScenarioConfig::parse(&EXAMPLE.replace("eta = 1.0\n", ""), Path::new("x")).unwrap();
        assert!(cfg.strategy().unwrap_err().to_string().contains("eta"));
    }

    #[test]
    fn csv_source_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("hour,kw\n");
        for t in 0..30 {
            text.push_str(&format!("{t},{}\n", if (8..16).contains(&t) { 5.0 } else { 0.0 }));
        }
        std::fs::write(dir.path().join("pv.csv"), text).unwrap();
        let cfg_text = EXAMPLE
            .replace(
                "source = \"synthetic\"\npeak_kw = 10.0\ndaylight = [6, 18]",
                "source = \"csv\"\npath = \"pv.csv\"\ncolumn = \"kw\"",
            )
            .replace("mode = \"switched\"\neta = 1.0", "mode = \"intermittent\"");
        let file = dir.path().join("s.toml");
        std::fs::write(&file, cfg_text).unwrap();
        let loaded = load_scenario(&file).unwrap();
        assert_eq!(loaded.profile.len(), 24);
        assert_eq!(loaded.scenario.schedule.hard_steps().count(), 8);
    }
}
