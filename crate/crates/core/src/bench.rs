//! Wall-clock timing of the backward pass and the stacked-QP reference.

use std::time::Instant;

use crate::controller::backward_pass;
use crate::error::{Error, Result};
use crate::model::{sample_fleet, ConstraintMode, ConstraintSchedule, Scenario};
use crate::oracle::{build_stacked_qp, solve_kkt};
use crate::output::TimingRow;

/// Battery fleet of `agents` agents over `horizon` steps whose modes cycle
/// through hard, soft and unconstrained.
pub fn bench_scenario(horizon: usize, agents: usize, seed: u64) -> Result<Scenario> {
    let sample = sample_fleet(agents, seed)?;
    let modes = (0..horizon)
        .map(|t| match t % 3 {
            0 => ConstraintMode::Hard,
            1 => ConstraintMode::Soft { eta: 1.0 },
            _ => ConstraintMode::Unconstrained,
        })
        .collect();
    let targets = (0..horizon).map(|t| (t % 7) as f64).collect();
    let schedule = ConstraintSchedule::new(modes, targets)?;
    let cost = sample.cost_spec(horizon);
    Scenario::new(sample.fleet, cost, schedule, sample.x0, seed)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time_reps<F: FnMut() -> Result<()>>(reps: usize, mut f: F) -> Result<(f64, f64)> {
    if reps == 0 {
        return Err(Error::Validation("reps must be at least 1".into()));
    }
    // one untimed warm-up run
    f()?;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64());
    }
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((median(samples), min))
}

pub fn time_backward_pass(horizon: usize, agents: usize, reps: usize) -> Result<TimingRow> {
    let sc = bench_scenario(horizon, agents, 1)?;
    let (median_seconds, min_seconds) = time_reps(reps, || {
        std::hint::black_box(backward_pass(&sc)?);
        Ok(())
    })?;
    Ok(TimingRow {
        solver: "backward_pass",
        horizon,
        agents,
        reps,
        median_seconds,
        min_seconds,
    })
}

/// Times assembly plus dense solve of the full-horizon KKT system.
pub fn time_oracle(horizon: usize, agents: usize, reps: usize) -> Result<TimingRow> {
    let sc = bench_scenario(horizon, agents, 1)?;
    let (median_seconds, min_seconds) = time_reps(reps, || {
        let qp = build_stacked_qp(&sc)?;
        std::hint::black_box(solve_kkt(&qp)?);
        Ok(())
    })?;
    Ok(TimingRow {
        solver: "stacked_kkt",
        horizon,
        agents,
        reps,
        median_seconds,
        min_seconds,
    })
}

/// Backward pass on every `(T, N)` pair, then the stacked QP for every `T`
/// at `oracle_agents` agents (dense KKT at fleet scale is impractical).
/// Runs sequentially so timings do not interfere.
pub fn run_bench(
    t_list: &[usize],
    n_list: &[usize],
    reps: usize,
    oracle_agents: Option<usize>,
) -> Result<Vec<TimingRow>> {
    if t_list.is_empty() || n_list.is_empty() {
        return Err(Error::EmptyInput("bench needs at least one horizon and one fleet size"));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        for &t in t_list {
            rows.push(time_backward_pass(t, n, reps)?);
        }
    }
    if let Some(n) = oracle_agents {
        for &t in t_list {
            rows.push(time_oracle(t, n, reps)?);
        }
    }
    Ok(rows)
}
