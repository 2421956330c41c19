//! Closed-loop rollouts under additive Gaussian noise and Monte Carlo
//! aggregation.
//!
//! Randomness is counter based: path `i` of a batch with base seed `s` uses
//! a ChaCha8 generator seeded with `s` on stream `i`. The draws of a path
//! therefore do not depend on how paths are scheduled across workers, and
//! `rollout(.., s)` reproduces path 0 of any batch seeded with `s`.

use nalgebra::{Cholesky, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::controller::GainSchedule;
use crate::error::{Error, Result};
use crate::model::{stage_cost, terminal_cost, AgentClass, ConstraintMode, Scenario};
use crate::numkernel::{all_finite_vec, max_abs, min_eigenvalue_symmetric, Matrix, Vector};

/// Environment variable overriding the Monte Carlo worker count.
pub const WORKERS_ENV: &str = "EQLQ_WORKERS";

const PSD_SLACK: f64 = 1e-10;

#[derive(Clone, Debug)]
enum Factor {
    Zero(usize),
    Diagonal(Vector),
    Dense(Matrix),
}

/// Draws `w ~ N(0, W)` through a square-root factor computed once.
#[derive(Clone, Debug)]
pub struct NoiseSampler {
    factor: Factor,
}

impl NoiseSampler {
    pub fn new(w: &Matrix) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n {
            return Err(Error::dims("noise covariance", "square", format!("{}x{}", n, w.ncols())));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Ok(Self {
                factor: Factor::Zero(n),
            });
        }
        let scale = max_abs(w);
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || w[(i, j)] == 0.0));
        if diagonal {
            let mut sd = Vector::zeros(n);
            for i in 0..n {
                let v = w[(i, i)];
                if v < -PSD_SLACK * scale {
                    return Err(Error::NotPsd { min_eigenvalue: v });
                }
                sd[i] = v.max(0.0).sqrt();
            }
            return Ok(Self {
                factor: Factor::Diagonal(sd),
            });
        }
        let lo = min_eigenvalue_symmetric(w)?;
        if lo < -PSD_SLACK * scale {
            return Err(Error::NotPsd { min_eigenvalue: lo });
        }
        let sym = (w + w.transpose()) * 0.5;
        let l = match Cholesky::new(sym.clone()) {
            Some(ch) => ch.l(),
            None => {
                // Singular covariance: V·diag(√λ⁺).
                let eig = SymmetricEigen::new(sym);
                let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
                eig.eigenvectors * Matrix::from_diagonal(&roots)
            }
        };
        Ok(Self {
            factor: Factor::Dense(l),
        })
    }

    pub fn dim(&self) -> usize {
        match &self.factor {
            Factor::Zero(n) => *n,
            Factor::Diagonal(sd) => sd.len(),
            Factor::Dense(l) => l.nrows(),
        }
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match &self.factor {
            Factor::Zero(n) => Vector::zeros(*n),
            Factor::Diagonal(sd) => sd.map(|s| {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            }),
            Factor::Dense(l) => {
                let z = Vector::from_fn(l.ncols(), |_, _| -> f64 { StandardNormal.sample(rng) });
                l * z
            }
        }
    }
}

/// One zero-mean Gaussian draw with covariance `w`.
pub fn draw_noise<R: rand::Rng + ?Sized>(w: &Matrix, rng: &mut R) -> Result<Vector> {
    Ok(NoiseSampler::new(w)?.draw(rng))
}

/// Generator for path `stream` of a batch seeded with `seed`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    /// `x_0 … x_T`.
    pub states: Vec<Vector>,
    /// `u_0 … u_{T−1}`.
    pub inputs: Vec<Vector>,
    /// Running costs for `t < T` followed by the terminal cost at index `T`.
    pub step_costs: Vec<f64>,
    /// `1ᵀu_t − c_t` for `t < T`.
    pub residuals: Vec<f64>,
    pub total_cost: f64,
}

impl TrajectoryRecord {
    /// Largest `|1ᵀu_t − c_t| / max(1, |c_t|)` over hard steps.
    pub fn max_scaled_hard_residual(&self, scenario: &Scenario) -> f64 {
        scenario
            .schedule
            .hard_steps()
            .map(|t| self.residuals[t].abs() / scenario.schedule.target(t).abs().max(1.0))
            .fold(0.0, f64::max)
    }

    pub fn total_inputs(&self) -> Vec<f64> {
        self.inputs.iter().map(|u| u.sum()).collect()
    }
}

fn check_compatible(scenario: &Scenario, schedule: &GainSchedule) -> Result<()> {
    if schedule.horizon() != scenario.horizon() {
        return Err(Error::dims("gain schedule horizon", scenario.horizon(), schedule.horizon()));
    }
    if schedule.n_tot() != scenario.fleet.n_tot() {
        return Err(Error::dims("gain schedule state", scenario.fleet.n_tot(), schedule.n_tot()));
    }
    if schedule.m_tot() != scenario.fleet.m_tot() {
        return Err(Error::dims("gain schedule input", scenario.fleet.m_tot(), schedule.m_tot()));
    }
    Ok(())
}

fn simulate<F>(scenario: &Scenario, schedule: &GainSchedule, mut noise: F) -> Result<TrajectoryRecord>
where
    F: FnMut() -> Vector,
{
    check_compatible(scenario, schedule)?;
    let horizon = scenario.horizon();
    let (a, b) = (scenario.fleet.a(), scenario.fleet.b());
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut step_costs = Vec::with_capacity(horizon + 1);
    let mut residuals = Vec::with_capacity(horizon);
    let mut x = scenario.x0.clone();
    for t in 0..horizon {
        let u = schedule.control_at(t, &x)?;
        step_costs.push(stage_cost(&x, &u, t, &scenario.cost, &scenario.schedule)?);
        residuals.push(u.sum() - scenario.schedule.target(t));
        let next = a * &x + b * &u + noise();
        if !all_finite_vec(&next) {
            return Err(Error::NonFiniteState { t: t + 1 });
        }
        states.push(std::mem::replace(&mut x, next));
        inputs.push(u);
    }
    step_costs.push(terminal_cost(&x, &scenario.cost)?);
    states.push(x);
    let total_cost = step_costs.iter().sum();
    Ok(TrajectoryRecord {
        states,
        inputs,
        step_costs,
        residuals,
        total_cost,
    })
}

/// Closed-loop rollout with noise drawn from `seed` (stream 0).
pub fn rollout(scenario: &Scenario, schedule: &GainSchedule, seed: u64) -> Result<TrajectoryRecord> {
    let sampler = NoiseSampler::new(scenario.fleet.w())?;
    rollout_with(scenario, schedule, &sampler, seed, 0)
}

/// Rollout on a given generator stream with a precomputed noise factor.
pub fn rollout_with(
    scenario: &Scenario,
    schedule: &GainSchedule,
    sampler: &NoiseSampler,
    seed: u64,
    stream: u64,
) -> Result<TrajectoryRecord> {
    if sampler.dim() != scenario.fleet.n_tot() {
        return Err(Error::dims("noise sampler", scenario.fleet.n_tot(), sampler.dim()));
    }
    let mut rng = path_rng(seed, stream);
    simulate(scenario, schedule, || sampler.draw(&mut rng))
}

/// Rollout with `w ≡ 0`.
pub fn rollout_noise_free(scenario: &Scenario, schedule: &GainSchedule) -> Result<TrajectoryRecord> {
    let n = scenario.fleet.n_tot();
    simulate(scenario, schedule, || Vector::zeros(n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloSummary {
    pub n_paths: usize,
    pub mean_cost: f64,
    /// Sample standard deviation of the path costs over `√n_paths`.
    pub cost_std_error: f64,
    /// Largest `|1ᵀu_t − c_t|` over hard steps and paths.
    pub max_abs_hard_residual: f64,
    /// Mean over paths of `|1ᵀu_t − c_t|`, per step.
    pub mean_abs_residual: Vec<f64>,
    /// Mean SoC of class α agents per step (empty without class labels).
    pub alpha_mean_soc: Vec<f64>,
    /// Mean SoC of class β agents per step (empty without class labels).
    pub beta_mean_soc: Vec<f64>,
    pub mean_states: Vec<Vector>,
    pub mean_inputs: Vec<Vector>,
    pub mean_step_costs: Vec<f64>,
}

fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `n_paths` independent rollouts. The worker count comes from
/// `EQLQ_WORKERS`, defaulting to the available parallelism.
pub fn monte_carlo(
    scenario: &Scenario,
    schedule: &GainSchedule,
    n_paths: usize,
    base_seed: u64,
) -> Result<MonteCarloSummary> {
    monte_carlo_with_workers(scenario, schedule, n_paths, base_seed, worker_count())
}

pub fn monte_carlo_with_workers(
    scenario: &Scenario,
    schedule: &GainSchedule,
    n_paths: usize,
    base_seed: u64,
    workers: Option<usize>,
) -> Result<MonteCarloSummary> {
    if n_paths == 0 {
        return Err(Error::Validation("Monte Carlo needs at least one path".into()));
    }
    check_compatible(scenario, schedule)?;
    let sampler = NoiseSampler::new(scenario.fleet.w())?;
    let run = || -> Vec<Result<TrajectoryRecord>> {
        (0..n_paths)
            .into_par_iter()
            .map(|i| rollout_with(scenario, schedule, &sampler, base_seed, i as u64))
            .collect()
    };
    let results = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut paths = Vec::with_capacity(n_paths);
    for (i, r) in results.into_iter().enumerate() {
        paths.push(r.map_err(|e| Error::PathFailed {
            path: i,
            source: Box::new(e),
        })?);
    }
    Ok(summarize(scenario, &paths))
}

/// Aggregates rollouts in the order given.
pub fn summarize(scenario: &Scenario, paths: &[TrajectoryRecord]) -> MonteCarloSummary {
    let n_paths = paths.len();
    let horizon = scenario.horizon();
    let nf = n_paths as f64;
    let costs: Vec<f64> = paths.iter().map(|p| p.total_cost).collect();
    let mean_cost = costs.iter().sum::<f64>() / nf;
    let cost_std_error = if n_paths < 2 || costs.iter().all(|&c| c == costs[0]) {
        0.0
    } else {
        let var = costs.iter().map(|c| (c - mean_cost).powi(2)).sum::<f64>() / (nf - 1.0);
        (var / nf).sqrt()
    };

    let mut max_abs_hard_residual = 0.0_f64;
    let mut mean_abs_residual = vec![0.0; horizon];
    let mut mean_states = vec![Vector::zeros(scenario.fleet.n_tot()); horizon + 1];
    let mut mean_inputs = vec![Vector::zeros(scenario.fleet.m_tot()); horizon];
    let mut mean_step_costs = vec![0.0; horizon + 1];
    for p in paths {
        for t in 0..horizon {
            let r = p.residuals[t].abs();
            mean_abs_residual[t] += r;
            if scenario.schedule.mode(t) == ConstraintMode::Hard {
                max_abs_hard_residual = max_abs_hard_residual.max(r);
            }
            mean_inputs[t] += &p.inputs[t];
        }
        for t in 0..=horizon {
            mean_states[t] += &p.states[t];
            mean_step_costs[t] += p.step_costs[t];
        }
    }
    mean_abs_residual.iter_mut().for_each(|v| *v /= nf);
    mean_inputs.iter_mut().for_each(|v| *v /= nf);
    mean_states.iter_mut().for_each(|v| *v /= nf);
    mean_step_costs.iter_mut().for_each(|v| *v /= nf);

    let (alpha_mean_soc, beta_mean_soc) = match &scenario.classes {
        Some(classes) => (
            class_mean(scenario, classes, AgentClass::Alpha, &mean_states),
            class_mean(scenario, classes, AgentClass::Beta, &mean_states),
        ),
        None => (Vec::new(), Vec::new()),
    };

    MonteCarloSummary {
        n_paths,
        mean_cost,
        cost_std_error,
        max_abs_hard_residual,
        mean_abs_residual,
        alpha_mean_soc,
        beta_mean_soc,
        mean_states,
        mean_inputs,
        mean_step_costs,
    }
}

/// Mean over agents of `class` of each agent's first state coordinate.
pub fn class_mean(
    scenario: &Scenario,
    classes: &[AgentClass],
    class: AgentClass,
    states: &[Vector],
) -> Vec<f64> {
    let offsets = scenario.fleet.state_offsets();
    let members: Vec<usize> = classes
        .iter()
        .zip(&offsets)
        .filter(|(c, _)| **c == class)
        .map(|(_, &o)| o)
        .collect();
    if members.is_empty() {
        return vec![f64::NAN; states.len()];
    }
    states
        .iter()
        .map(|x| members.iter().map(|&o| x[o]).sum::<f64>() / members.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::backward_pass;
    use crate::model::{AgentModel, ConstraintSchedule, CostSpec, FleetModel};

    fn scalar_scenario(noise: f64, modes: Vec<ConstraintMode>, targets: Vec<f64>, x0: f64) -> Scenario {
        let horizon = modes.len();
        let fleet = FleetModel::from_agents(&[AgentModel::scalar(1.0, 1.0, noise)]).unwrap();
        let cost = CostSpec::constant_reference(
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
            &Vector::zeros(1),
            horizon,
        );
        Scenario::new(
            fleet,
            cost,
            ConstraintSchedule::new(modes, targets).unwrap(),
            Vector::from_element(1, x0),
            0,
        )
        .unwrap()
    }

    #[test]
    fn zero_covariance_draws_zero() {
        let s = NoiseSampler::new(&Matrix::zeros(3, 3)).unwrap();
        let mut rng = path_rng(1, 0);
        for _ in 0..5 {
            assert_eq!(s.draw(&mut rng), Vector::zeros(3));
        }
    }

    #[test]
    fn diagonal_variance_matches() {
        let w = Matrix::identity(50, 50) * 3.0;
        let s = NoiseSampler::new(&w).unwrap();
        let mut rng = path_rng(5, 0);
        let n = 100_000;
        let mut sum_sq = Vector::zeros(50);
        for _ in 0..n {
            let d = s.draw(&mut rng);
            sum_sq += d.component_mul(&d);
        }
        for i in 0..50 {
            let var = sum_sq[i] / n as f64;
            assert!((var - 3.0).abs() < 0.03 * 3.0, "coord {i}: {var}");
        }
    }

    #[test]
    fn dense_and_singular_covariance() {
        let w = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = NoiseSampler::new(&w).unwrap();
        let mut rng = path_rng(9, 0);
        let n = 50_000;
        let mut acc = Matrix::zeros(2, 2);
        for _ in 0..n {
            let d = s.draw(&mut rng);
            acc += &d * d.transpose();
        }
        acc /= n as f64;
        assert!(max_abs(&(acc - &w)) < 0.06);

        let singular = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = NoiseSampler::new(&singular).unwrap();
        let d = s.draw(&mut rng);
        assert!((d[0] - d[1]).abs() < 1e-12);

        let bad = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(NoiseSampler::new(&bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn same_seed_same_draws() {
        let w = Matrix::identity(4, 4);
        let mut a = path_rng(42, 3);
        let mut b = path_rng(42, 3);
        for _ in 0..10 {
            assert_eq!(draw_noise(&w, &mut a).unwrap(), draw_noise(&w, &mut b).unwrap());
        }
        let mut c = path_rng(42, 4);
        assert_ne!(draw_noise(&w, &mut a).unwrap(), draw_noise(&w, &mut c).unwrap());
    }

    #[test]
    fn hard_single_agent_moves_by_target() {
        let sc = scalar_scenario(0.0, vec![ConstraintMode::Hard], vec![2.5], 1.0);
        let g = backward_pass(&sc).unwrap();
        let tr = rollout(&sc, &g, 0).unwrap();
        assert!((tr.states[1][0] - 3.5).abs() < 1e-13);
        assert_eq!(tr.residuals.len(), 1);
        assert_eq!(tr.step_costs.len(), 2);
        assert!((tr.total_cost - tr.step_costs.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn noisy_hard_residuals_stay_at_rounding() {
        let sc = scalar_scenario(
            4.0,
            vec![ConstraintMode::Hard; 6],
            vec![1.0, -2.0, 0.0, 3.0, 10.0, 0.5],
            0.0,
        );
        let g = backward_pass(&sc).unwrap();
        let tr = rollout(&sc, &g, 17).unwrap();
        assert!(tr.max_scaled_hard_residual(&sc) <= 1e-9);
    }

    #[test]
    fn single_path_summary_matches_rollout() {
        let sc = scalar_scenario(1.0, vec![ConstraintMode::Unconstrained; 4], vec![0.0; 4], 2.0);
        let g = backward_pass(&sc).unwrap();
        let tr = rollout(&sc, &g, 8).unwrap();
        let mc = monte_carlo(&sc, &g, 1, 8).unwrap();
        assert_eq!(mc.mean_cost, tr.total_cost);
        assert_eq!(mc.cost_std_error, 0.0);
        assert_eq!(mc.mean_states, tr.states);
    }

    #[test]
    fn noise_free_batches_have_zero_spread() {
        let sc = scalar_scenario(0.0, vec![ConstraintMode::Hard; 3], vec![1.0; 3], 0.3);
        let g = backward_pass(&sc).unwrap();
        let mc = monte_carlo(&sc, &g, 17, 1).unwrap();
        assert_eq!(mc.cost_std_error, 0.0);
    }

    #[test]
    fn zero_paths_rejected() {
        let sc = scalar_scenario(0.0, vec![ConstraintMode::Hard], vec![1.0], 0.0);
        let g = backward_pass(&sc).unwrap();
        assert!(monte_carlo(&sc, &g, 0, 1).is_err());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let sc = scalar_scenario(2.0, vec![ConstraintMode::Unconstrained; 5], vec![0.0; 5], 1.0);
        let g = backward_pass(&sc).unwrap();
        let one = monte_carlo_with_workers(&sc, &g, 64, 3, Some(1)).unwrap();
        let many = monte_carlo_with_workers(&sc, &g, 64, 3, Some(4)).unwrap();
        assert_eq!(one, many);
    }
}
