//! Residential battery fleet absorbing the excess output of a solar farm.
//!
//! Each agent is a scalar battery `x_{t+1} = a_i x_t + u_t + w_t` (kWh, kW
//! over one-hour steps). Class α agents track 80 % SoC, class β agents 40 %.
//! The fleet's total charging power must equal the solar excess `c_t` on the
//! daylight set `𝕊 = {t : c_t ≠ 0}`; what happens off `𝕊` depends on the
//! [`Strategy`].

use crate::controller::{backward_pass, GainSchedule};
use crate::error::{Error, Result};
use crate::model::{
    schedule_from_profile, synthetic_solar, AgentClass, ConstraintMode, ConstraintSchedule,
    FleetParams, Scenario, SolarProfile,
};
use crate::simulator::{class_mean, rollout, TrajectoryRecord};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    /// Hard constraint at every step; night steps force zero total power.
    Hard,
    /// Hard on `𝕊`, unconstrained elsewhere.
    Intermittent,
    /// Hard on `𝕊`, soft penalty with weight `eta` elsewhere.
    Switched { eta: f64 },
    /// No constraint at all.
    Unconstrained,
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Hard => "hard",
            Strategy::Intermittent => "intermittent",
            Strategy::Switched { .. } => "switched",
            Strategy::Unconstrained => "none",
        }
    }

    pub fn schedule(&self, profile: &SolarProfile) -> Result<ConstraintSchedule> {
        match *self {
            Strategy::Hard => {
                ConstraintSchedule::uniform(ConstraintMode::Hard, profile.samples().to_vec())
            }
            Strategy::Intermittent => schedule_from_profile(profile, ConstraintMode::Unconstrained),
            Strategy::Switched { eta } => {
                if !(eta.is_finite() && eta >= 0.0) {
                    return Err(Error::Validation(format!("soft weight must be nonnegative, got {eta}")));
                }
                schedule_from_profile(profile, ConstraintMode::Soft { eta })
            }
            Strategy::Unconstrained => ConstraintSchedule::new(
                vec![ConstraintMode::Unconstrained; profile.len()],
                profile.samples().to_vec(),
            ),
        }
    }
}

/// Inputs of the fleet scenario other than the strategy.
#[derive(Clone, Debug)]
pub struct DemoSetup {
    pub params: FleetParams,
    pub n_agents: usize,
    pub horizon: usize,
    pub peak_kw: f64,
    pub daylight: (usize, usize),
    /// Seed for the fleet draw and, through the scenario, the noise.
    pub seed: u64,
}

impl Default for DemoSetup {
    fn default() -> Self {
        Self {
            params: FleetParams::default(),
            n_agents: 50,
            horizon: 24,
            peak_kw: 150.0,
            daylight: (6, 18),
            seed: 2024,
        }
    }
}

impl DemoSetup {
    pub fn profile(&self) -> Result<SolarProfile> {
        synthetic_solar(self.horizon, self.peak_kw, self.daylight)
    }

    pub fn scenario(&self, strategy: Strategy) -> Result<Scenario> {
        fleet_scenario(&self.params, self.n_agents, self.seed, &self.profile()?, strategy)
    }
}

/// Samples the fleet and attaches the schedule implied by `strategy` and
/// `profile`. The horizon is the profile length.
pub fn fleet_scenario(
    params: &FleetParams,
    n_agents: usize,
    seed: u64,
    profile: &SolarProfile,
    strategy: Strategy,
) -> Result<Scenario> {
    let sample = params.sample(n_agents, seed)?;
    let schedule = strategy.schedule(profile)?;
    let cost = sample.cost_spec(profile.len());
    Scenario::new(sample.fleet, cost, schedule, sample.x0, seed)?.with_classes(sample.classes)
}

/// Scalar summaries of one demo rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DemoMetrics {
    /// `max_{t∈𝕊} |1ᵀu_t − c_t|`.
    pub max_hard_residual: f64,
    /// `max_{t∈𝕊} |1ᵀu_t − c_t| / max(1, |c_t|)`.
    pub max_scaled_hard_residual: f64,
    /// `|mean_α x_T − target_α|`.
    pub alpha_terminal_error: f64,
    /// `|mean_β x_T − target_β|`.
    pub beta_terminal_error: f64,
    /// `min_t 1ᵀu_t`.
    pub most_negative_total_power: f64,
    /// Mean over `t ∉ 𝕊` of the average of the two class errors
    /// `|mean_class x_{t+1} − target_class|`; NaN if every step is in `𝕊`.
    pub off_window_tracking_error: f64,
    /// Largest `|1ᵀu_t − c_t|` over steps outside `𝕊`.
    pub max_off_window_residual: f64,
}

/// Computes [`DemoMetrics`] for a rollout of a two-class scenario.
pub fn demo_metrics(
    scenario: &Scenario,
    params: &FleetParams,
    traj: &TrajectoryRecord,
) -> Result<DemoMetrics> {
    let classes = scenario
        .classes
        .as_ref()
        .ok_or_else(|| Error::Validation("demo metrics need class labels".into()))?;
    let alpha = class_mean(scenario, classes, AgentClass::Alpha, &traj.states);
    let beta = class_mean(scenario, classes, AgentClass::Beta, &traj.states);
    let target_a = params.class_targets.0 * params.capacity_kwh;
    let target_b = params.class_targets.1 * params.capacity_kwh;
    let horizon = scenario.horizon();
    let sched = &scenario.schedule;
    let in_window = |t: usize| sched.target(t) != 0.0;

    let mut max_hard = 0.0_f64;
    let mut max_off = 0.0_f64;
    let mut off_sum = 0.0;
    let mut off_n = 0usize;
    for t in 0..horizon {
        let r = traj.residuals[t].abs();
        if in_window(t) {
            max_hard = max_hard.max(r);
        } else {
            max_off = max_off.max(r);
            let err = |v: f64, target: f64| if v.is_nan() { 0.0 } else { (v - target).abs() };
            off_sum += 0.5 * (err(alpha[t + 1], target_a) + err(beta[t + 1], target_b));
            off_n += 1;
        }
    }
    let terminal = |v: f64, target: f64| if v.is_nan() { 0.0 } else { (v - target).abs() };
    Ok(DemoMetrics {
        max_hard_residual: max_hard,
        max_scaled_hard_residual: (0..horizon)
            .filter(|&t| in_window(t))
            .map(|t| traj.residuals[t].abs() / sched.target(t).abs().max(1.0))
            .fold(0.0, f64::max),
        alpha_terminal_error: terminal(alpha[horizon], target_a),
        beta_terminal_error: terminal(beta[horizon], target_b),
        most_negative_total_power: traj
            .total_inputs()
            .into_iter()
            .fold(f64::INFINITY, f64::min),
        off_window_tracking_error: if off_n == 0 {
            f64::NAN
        } else {
            off_sum / off_n as f64
        },
        max_off_window_residual: max_off,
    })
}

/// Everything produced by one demo run.
#[derive(Clone, Debug)]
pub struct DemoRun {
    pub strategy: Strategy,
    pub scenario: Scenario,
    pub gains: GainSchedule,
    pub trajectory: TrajectoryRecord,
    pub metrics: DemoMetrics,
    pub alpha_soc: Vec<f64>,
    pub beta_soc: Vec<f64>,
}

/// Synthesizes the controller for `strategy` and runs one noisy rollout
/// seeded with `setup.seed`.
pub fn run_demo(setup: &DemoSetup, strategy: Strategy) -> Result<DemoRun> {
    let scenario = setup.scenario(strategy)?;
    let gains = backward_pass(&scenario)?;
    let trajectory = rollout(&scenario, &gains, setup.seed)?;
    let metrics = demo_metrics(&scenario, &setup.params, &trajectory)?;
    let classes = scenario.classes.clone().unwrap_or_default();
    let alpha_soc = class_mean(&scenario, &classes, AgentClass::Alpha, &trajectory.states);
    let beta_soc = class_mean(&scenario, &classes, AgentClass::Beta, &trajectory.states);
    Ok(DemoRun {
        strategy,
        scenario,
        gains,
        trajectory,
        metrics,
        alpha_soc,
        beta_soc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_give_expected_modes() {
        let setup = DemoSetup::default();
        let profile = setup.profile().unwrap();
        let hard = Strategy::Hard.schedule(&profile).unwrap();
        assert_eq!(hard.hard_steps().count(), 24);
        let inter = Strategy::Intermittent.schedule(&profile).unwrap();
        assert_eq!(inter.hard_steps().collect::<Vec<_>>(), (7..18).collect::<Vec<_>>());
        assert_eq!(inter.mode(0), ConstraintMode::Unconstrained);
        let sw = Strategy::Switched { eta: 1.0 }.schedule(&profile).unwrap();
        assert_eq!(sw.mode(20), ConstraintMode::Soft { eta: 1.0 });
        assert!(Strategy::Switched { eta: -1.0 }.schedule(&profile).is_err());
    }

    #[test]
    fn hard_demo_meets_constraint_and_classes_separate() {
        let run = run_demo(&DemoSetup::default(), Strategy::Hard).unwrap();
        assert!(run.metrics.max_scaled_hard_residual <= 1e-9);
        let t = run.scenario.horizon();
        assert!(run.alpha_soc[t] > run.beta_soc[t] + 10.0);
        assert!((run.alpha_soc[t] - 64.0).abs() < (run.alpha_soc[0] - 64.0).abs());
        assert!((run.beta_soc[t] - 32.0).abs() < (run.beta_soc[0] - 32.0).abs());
    }

    #[test]
    fn intermittent_tracks_better_off_window() {
        let setup = DemoSetup::default();
        let hard = run_demo(&setup, Strategy::Hard).unwrap().metrics;
        let inter = run_demo(&setup, Strategy::Intermittent).unwrap().metrics;
        let switched = run_demo(&setup, Strategy::Switched { eta: 1.0 }).unwrap().metrics;
        assert!(inter.off_window_tracking_error < hard.off_window_tracking_error);
        assert!(switched.most_negative_total_power > inter.most_negative_total_power);
    }

    #[test]
    fn demo_is_reproducible() {
        let a = run_demo(&DemoSetup::default(), Strategy::Intermittent).unwrap();
        let b = run_demo(&DemoSetup::default(), Strategy::Intermittent).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }
}
