//! Implementations of the `eqlq` subcommands. Each writes its outputs and a
//! `manifest.json` into the given directory and returns a short summary.

use std::path::Path;

use crate::bench::run_bench;
use crate::config::load_scenario;
use crate::controller::backward_pass;
use crate::demo::{run_demo, DemoMetrics, DemoSetup, Strategy};
use crate::error::Result;
use crate::output::{
    summary_rows, write_class_soc_csv, write_eigenvalues_csv, write_gains_csv,
    write_mean_trajectory_csv, write_summary_csv, write_timing_csv, write_trajectory_csv,
    RunManifest, TimingRow,
};
use crate::simulator::{monte_carlo, MonteCarloSummary};
use crate::verify::{run_campaign, VerifyReport};

pub const GAINS_FILE: &str = "gains.csv";
pub const EIGENVALUES_FILE: &str = "p_min_eigenvalues.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MEAN_TRAJECTORY_FILE: &str = "mean_trajectory.csv";
pub const PATH_TRAJECTORY_FILE: &str = "trajectory_path0.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CLASS_SOC_FILE: &str = "class_soc.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";

#[derive(Clone, Debug)]
pub struct SynthesizeOutcome {
    pub horizon: usize,
    pub min_p_eigenvalue: f64,
    pub capacity_warnings: usize,
}

pub fn synthesize(scenario_path: &Path, out_dir: &Path) -> Result<SynthesizeOutcome> {
    let loaded = load_scenario(scenario_path)?;
    let gains = backward_pass(&loaded.scenario)?;
    let eigs = gains.p_min_eigenvalues()?;
    std::fs::create_dir_all(out_dir)?;
    write_gains_csv(&out_dir.join(GAINS_FILE), &gains)?;
    write_eigenvalues_csv(&out_dir.join(EIGENVALUES_FILE), &eigs)?;
    let mut manifest = RunManifest::new("synthesize")
        .with_scenario(scenario_path)?
        .with_seed(loaded.scenario.seed)
        .param("strategy", loaded.strategy.label());
    manifest.add_output(out_dir, GAINS_FILE)?;
    manifest.add_output(out_dir, EIGENVALUES_FILE)?;
    manifest.write(out_dir)?;
    Ok(SynthesizeOutcome {
        horizon: gains.horizon(),
        min_p_eigenvalue: eigs.into_iter().fold(f64::INFINITY, f64::min),
        capacity_warnings: loaded.capacity_warnings.len(),
    })
}

#[derive(Clone, Debug)]
pub struct SimulateOutcome {
    pub summary: MonteCarloSummary,
    pub predicted_cost: f64,
}

/// Synthesizes the controller and runs `n_paths` rollouts; path `i` uses
/// generator stream `i` of `seed`.
pub fn simulate(scenario_path: &Path, n_paths: usize, seed: u64, out_dir: &Path) -> Result<SimulateOutcome> {
    let loaded = load_scenario(scenario_path)?;
    let sc = &loaded.scenario;
    let gains = backward_pass(sc)?;
    let summary = monte_carlo(sc, &gains, n_paths, seed)?;
    let first = crate::simulator::rollout(sc, &gains, seed)?;
    let predicted_cost = gains.predicted_cost(&sc.x0)?;

    std::fs::create_dir_all(out_dir)?;
    write_summary_csv(&out_dir.join(SUMMARY_FILE), &summary_rows(&summary, predicted_cost))?;
    write_mean_trajectory_csv(&out_dir.join(MEAN_TRAJECTORY_FILE), sc, &summary)?;
    write_trajectory_csv(&out_dir.join(PATH_TRAJECTORY_FILE), sc, &first)?;
    let mut manifest = RunManifest::new("simulate")
        .with_scenario(scenario_path)?
        .with_seed(seed)
        .param("paths", n_paths)
        .param("strategy", loaded.strategy.label());
    for f in [SUMMARY_FILE, MEAN_TRAJECTORY_FILE, PATH_TRAJECTORY_FILE] {
        manifest.add_output(out_dir, f)?;
    }
    manifest.write(out_dir)?;
    Ok(SimulateOutcome {
        summary,
        predicted_cost,
    })
}

pub fn verify(count: usize, seed: u64) -> VerifyReport {
    run_campaign(count, seed)
}

pub fn bench(
    t_list: &[usize],
    n_list: &[usize],
    reps: usize,
    oracle_agents: Option<usize>,
    out_dir: &Path,
) -> Result<Vec<TimingRow>> {
    let rows = run_bench(t_list, n_list, reps, oracle_agents)?;
    std::fs::create_dir_all(out_dir)?;
    write_timing_csv(&out_dir.join(TIMING_FILE), &rows)?;
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut manifest = RunManifest::new("bench")
        .param("t_list", join(t_list))
        .param("n_list", join(n_list))
        .param("reps", reps)
        .param(
            "oracle_agents",
            oracle_agents.map_or("none".to_string(), |n| n.to_string()),
        );
    manifest.add_output(out_dir, TIMING_FILE)?;
    manifest.write(out_dir)?;
    Ok(rows)
}

pub fn demo_metric_rows(m: &DemoMetrics) -> Vec<(&'static str, f64)> {
    vec![
        ("max_hard_residual", m.max_hard_residual),
        ("max_scaled_hard_residual", m.max_scaled_hard_residual),
        ("alpha_terminal_error", m.alpha_terminal_error),
        ("beta_terminal_error", m.beta_terminal_error),
        ("most_negative_total_power", m.most_negative_total_power),
        ("off_window_tracking_error", m.off_window_tracking_error),
        ("max_off_window_residual", m.max_off_window_residual),
    ]
}

pub fn demo(setup: &DemoSetup, strategy: Strategy, out_dir: &Path) -> Result<DemoMetrics> {
    let run = run_demo(setup, strategy)?;
    std::fs::create_dir_all(out_dir)?;
    write_trajectory_csv(&out_dir.join(TRAJECTORY_FILE), &run.scenario, &run.trajectory)?;
    write_class_soc_csv(&out_dir.join(CLASS_SOC_FILE), &run.alpha_soc, &run.beta_soc)?;
    write_summary_csv(&out_dir.join(METRICS_FILE), &demo_metric_rows(&run.metrics))?;
    write_gains_csv(&out_dir.join(GAINS_FILE), &run.gains)?;
    let mut manifest = RunManifest::new("demo")
        .with_seed(setup.seed)
        .param("variant", strategy.label())
        .param("agents", setup.n_agents)
        .param("horizon", setup.horizon)
        .param("peak_kw", setup.peak_kw)
        .param("daylight", format!("{}..{}", setup.daylight.0, setup.daylight.1));
    if let Strategy::Switched { eta } = strategy {
        manifest = manifest.param("eta", eta);
    }
    for f in [TRAJECTORY_FILE, CLASS_SOC_FILE, METRICS_FILE, GAINS_FILE] {
        manifest.add_output(out_dir, f)?;
    }
    manifest.write(out_dir)?;
    Ok(run.metrics)
}
