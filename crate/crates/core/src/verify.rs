//! Randomized cross-checks of the backward pass against the reference
//! solvers in [`crate::oracle`], plus the algebraic identities of the hard
//! step operators.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controller::{backward_pass, hard_multiplier_half, GainSchedule};
use crate::error::Result;
use crate::model::{AgentDims, ConstraintMode, ConstraintSchedule, CostSpec, FleetModel, Scenario};
use crate::numkernel::{block_diag, max_abs, ones, Matrix, Vector};
use crate::oracle::{build_stacked_qp, open_loop_compare, solve_kkt, unconstrained_riccati};

pub const DP_QP_TOL: f64 = 1e-8;
pub const MULTIPLIER_TOL: f64 = 1e-7;
pub const RICCATI_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-8;
pub const ANNIHILATION_TOL: f64 = 1e-10;
pub const OFFSET_TOL: f64 = 1e-10;
pub const IDEMPOTENCE_TOL: f64 = 1e-9;

/// Which modes a random instance may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeMix {
    Mixed,
    HardOnly,
    NoneOnly,
}

/// Size limits for random instances.
#[derive(Clone, Copy, Debug)]
pub struct InstanceShape {
    pub max_agents: usize,
    pub max_horizon: usize,
    pub max_agent_dim: usize,
    pub max_spectral_radius: f64,
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self {
            max_agents: 5,
            max_horizon: 10,
            max_agent_dim: 2,
            max_spectral_radius: 1.2,
        }
    }
}

fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn uniform_vector<R: Rng>(rng: &mut R, len: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_fn(len, |_, _| rng.random_range(lo..hi))
}

/// `GGᵀ` with `G` uniform in `[−1, 1]`; PSD and possibly singular.
fn random_psd<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    let k = rng.random_range(1..=n);
    let g = uniform_matrix(rng, n, k, -1.0, 1.0);
    &g * g.transpose()
}

/// Draws a scenario within `shape`. The state matrix of each agent is
/// rescaled so that its Frobenius norm, and hence its spectral radius, is at
/// most `shape.max_spectral_radius`.
pub fn random_scenario<R: Rng>(rng: &mut R, shape: &InstanceShape, mix: ModeMix) -> Result<Scenario> {
    let n_agents = rng.random_range(1..=shape.max_agents);
    let horizon = rng.random_range(1..=shape.max_horizon);
    let mut dims = Vec::with_capacity(n_agents);
    let mut a_blocks = Vec::with_capacity(n_agents);
    let mut b_blocks = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let nx = rng.random_range(1..=shape.max_agent_dim);
        let nu = rng.random_range(1..=shape.max_agent_dim);
        let mut a = uniform_matrix(rng, nx, nx, -1.0, 1.0);
        let norm = a.norm();
        if norm > 0.0 {
            let target = rng.random_range(0.2..shape.max_spectral_radius);
            a *= target / norm;
        }
        a_blocks.push(a);
        b_blocks.push(uniform_matrix(rng, nx, nu, -1.0, 1.0));
        dims.push(AgentDims { state: nx, input: nu });
    }
    let n: usize = dims.iter().map(|d| d.state).sum();
    let m: usize = dims.iter().map(|d| d.input).sum();
    let w = random_psd(rng, n) * 0.5;
    let fleet = FleetModel::new(dims, block_diag(&a_blocks)?, block_diag(&b_blocks)?, w)?;

    let q = random_psd(rng, n);
    let q_terminal = random_psd(rng, n);
    let r = Matrix::from_diagonal(&uniform_vector(rng, m, 0.1, 2.0));
    let refs = (0..=horizon).map(|_| uniform_vector(rng, n, -2.0, 2.0)).collect();
    let cost = CostSpec {
        q,
        r,
        q_terminal,
        refs,
    };

    let modes = (0..horizon)
        .map(|_| match mix {
            ModeMix::HardOnly => ConstraintMode::Hard,
            ModeMix::NoneOnly => ConstraintMode::Unconstrained,
            ModeMix::Mixed => match rng.random_range(0..3) {
                0 => ConstraintMode::Hard,
                1 => ConstraintMode::Soft {
                    eta: rng.random_range(0.0..10.0),
                },
                _ => ConstraintMode::Unconstrained,
            },
        })
        .collect();
    let targets = (0..horizon).map(|_| rng.random_range(-3.0..3.0)).collect();
    let schedule = ConstraintSchedule::new(modes, targets)?;
    let x0 = uniform_vector(rng, n, -2.0, 2.0);
    Scenario::new(fleet, cost, schedule, x0, rng.random())
}

/// Generator for instance `index` of a campaign seeded with `seed`.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Worst violations of the hard-step identities over one gain schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProjectionCheck {
    /// `max_t ‖1ᵀΓ_t‖∞`.
    pub annihilation: f64,
    /// `max_t |1ᵀγ_t − c_t| / max(1, |c_t|)`.
    pub offset: f64,
    /// `max_t ‖Γ_tΩ_tΓ_t − Γ_t‖∞ / ‖Γ_t‖∞`.
    pub idempotence: f64,
}

impl ProjectionCheck {
    pub fn passes(&self) -> bool {
        self.annihilation <= ANNIHILATION_TOL
            && self.offset <= OFFSET_TOL
            && self.idempotence <= IDEMPOTENCE_TOL
    }

    fn merge(self, o: Self) -> Self {
        Self {
            annihilation: self.annihilation.max(o.annihilation),
            offset: self.offset.max(o.offset),
            idempotence: self.idempotence.max(o.idempotence),
        }
    }
}

pub fn projection_check(gains: &GainSchedule) -> ProjectionCheck {
    let mut out = ProjectionCheck::default();
    for t in gains.modes.hard_steps() {
        let ops = &gains.operators[t];
        let one = ones(ops.gamma_mat.nrows());
        let c = gains.modes.target(t);
        let ann = (one.transpose() * &ops.gamma_mat).amax();
        let off = (ops.gamma_vec.sum() - c).abs() / c.abs().max(1.0);
        let g_norm = max_abs(&ops.gamma_mat);
        let idem = if g_norm > 0.0 {
            max_abs(&(&ops.gamma_mat * &ops.omega * &ops.gamma_mat - &ops.gamma_mat)) / g_norm
        } else {
            0.0
        };
        out = out.merge(ProjectionCheck {
            annihilation: ann,
            offset: off,
            idempotence: idem,
        });
    }
    out
}

/// Largest gap between the stacked-QP input-sum multipliers and the
/// per-step multipliers evaluated along the noise-free closed loop.
pub fn multiplier_gap(scenario: &Scenario, gains: &GainSchedule) -> Result<f64> {
    let qp = build_stacked_qp(scenario)?;
    let sol = solve_kkt(&qp)?;
    let (a, b) = (scenario.fleet.a(), scenario.fleet.b());
    let mut x = scenario.x0.clone();
    let mut gap = 0.0_f64;
    for t in 0..scenario.horizon() {
        if let Some(mu) = qp.sum_multiplier(&sol.multipliers, t) {
            let half = hard_multiplier_half(scenario, gains, t, &x)?;
            gap = gap.max((mu / 2.0 - half).abs());
        }
        let u = gains.control_at(t, &x)?;
        x = a * &x + b * &u;
    }
    Ok(gap)
}

/// Largest elementwise gap between the controller's `P_t` and the textbook
/// Riccati recursion after all steps are switched to unconstrained.
pub fn riccati_gap(scenario: &Scenario) -> Result<f64> {
    let free = scenario.with_schedule(ConstraintSchedule::unconstrained(scenario.horizon()))?;
    let gains = backward_pass(&free)?;
    let base = unconstrained_riccati(&free)?;
    Ok(gains
        .p
        .iter()
        .zip(&base.p)
        .map(|(p, r)| max_abs(&(p - r)))
        .fold(0.0, f64::max))
}

/// Results of all checks on one random instance.
#[derive(Clone, Debug)]
pub struct InstanceOutcome {
    pub index: usize,
    pub n_agents: usize,
    pub horizon: usize,
    pub hard_steps: usize,
    pub dp_qp_deviation: f64,
    pub multiplier_gap: f64,
    pub riccati_gap: f64,
    pub min_p_eigenvalue: f64,
    pub projection: ProjectionCheck,
    pub error: Option<String>,
}

impl InstanceOutcome {
    pub fn passes(&self) -> bool {
        self.error.is_none()
            && self.dp_qp_deviation <= DP_QP_TOL
            && self.multiplier_gap <= MULTIPLIER_TOL
            && self.riccati_gap <= RICCATI_TOL
            && self.projection.passes()
    }
}

fn check_instance(index: usize, scenario: &Scenario) -> InstanceOutcome {
    let mut out = InstanceOutcome {
        index,
        n_agents: scenario.fleet.n_agents(),
        horizon: scenario.horizon(),
        hard_steps: scenario.schedule.hard_steps().count(),
        dp_qp_deviation: f64::NAN,
        multiplier_gap: f64::NAN,
        riccati_gap: f64::NAN,
        min_p_eigenvalue: f64::NAN,
        projection: ProjectionCheck::default(),
        error: None,
    };
    let run = |out: &mut InstanceOutcome| -> Result<()> {
        let gains = backward_pass(scenario)?;
        out.projection = projection_check(&gains);
        out.min_p_eigenvalue = gains
            .p_min_eigenvalues()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        out.dp_qp_deviation = open_loop_compare(scenario, &gains)?.max_deviation();
        out.multiplier_gap = multiplier_gap(scenario, &gains)?;
        out.riccati_gap = riccati_gap(scenario)?;
        Ok(())
    };
    if let Err(e) = run(&mut out) {
        out.error = Some(e.to_string());
    }
    out
}

/// Runs the checks on one random instance of a campaign.
pub fn verify_instance(seed: u64, index: usize, mix: ModeMix) -> InstanceOutcome {
    let mut rng = instance_rng(seed, index as u64);
    match random_scenario(&mut rng, &InstanceShape::default(), mix) {
        Ok(sc) => check_instance(index, &sc),
        Err(e) => InstanceOutcome {
            index,
            n_agents: 0,
            horizon: 0,
            hard_steps: 0,
            dp_qp_deviation: f64::NAN,
            multiplier_gap: f64::NAN,
            riccati_gap: f64::NAN,
            min_p_eigenvalue: f64::NAN,
            projection: ProjectionCheck::default(),
            error: Some(e.to_string()),
        },
    }
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub seed: u64,
    pub outcomes: Vec<InstanceOutcome>,
    /// Hard-only instances checked for `P_t ⪰ 0`.
    pub psd_outcomes: Vec<InstanceOutcome>,
    pub warnings: Vec<String>,
}

fn worst(outcomes: &[InstanceOutcome], f: impl Fn(&InstanceOutcome) -> f64) -> f64 {
    outcomes.iter().map(f).fold(0.0, |acc, v| if v.is_nan() { acc } else { acc.max(v) })
}

impl VerifyReport {
    pub fn worst_dp_qp(&self) -> f64 {
        worst(&self.outcomes, |o| o.dp_qp_deviation)
    }

    pub fn worst_multiplier(&self) -> f64 {
        worst(&self.outcomes, |o| o.multiplier_gap)
    }

    pub fn worst_riccati(&self) -> f64 {
        worst(&self.outcomes, |o| o.riccati_gap)
    }

    pub fn worst_projection(&self) -> ProjectionCheck {
        self.outcomes
            .iter()
            .chain(&self.psd_outcomes)
            .fold(ProjectionCheck::default(), |acc, o| acc.merge(o.projection))
    }

    /// Smallest eigenvalue of any `P_t` over the hard-only instances.
    pub fn min_hard_p_eigenvalue(&self) -> f64 {
        self.psd_outcomes
            .iter()
            .map(|o| o.min_p_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    /// Same over the mixed-mode instances, which carry no guarantee.
    pub fn min_mixed_p_eigenvalue(&self) -> f64 {
        self.outcomes
            .iter()
            .map(|o| o.min_p_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for o in &self.outcomes {
            if !o.passes() {
                out.push(format!(
                    "instance {}: N={} T={} dp_qp={:.3e} multiplier={:.3e} riccati={:.3e} projection={:?} error={:?}",
                    o.index,
                    o.n_agents,
                    o.horizon,
                    o.dp_qp_deviation,
                    o.multiplier_gap,
                    o.riccati_gap,
                    o.projection,
                    o.error
                ));
            }
        }
        for o in &self.psd_outcomes {
            if o.error.is_some() || !(o.min_p_eigenvalue >= -PSD_TOL) || !o.projection.passes() {
                out.push(format!(
                    "hard-only instance {}: min eig P = {:.3e} projection={:?} error={:?}",
                    o.index, o.min_p_eigenvalue, o.projection, o.error
                ));
            }
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    /// Plain-text report. Contains no timing or host information, so equal
    /// seeds give identical text.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "mixed-mode instances: {}", self.outcomes.len());
        let _ = writeln!(s, "hard-only instances: {}", self.psd_outcomes.len());
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        let _ = writeln!(s, "worst DP vs QP deviation: {:.3e} (tol {DP_QP_TOL:e})", self.worst_dp_qp());
        let _ = writeln!(
            s,
            "worst multiplier gap: {:.3e} (tol {MULTIPLIER_TOL:e})",
            self.worst_multiplier()
        );
        let _ = writeln!(
            s,
            "worst unconstrained Riccati gap: {:.3e} (tol {RICCATI_TOL:e})",
            self.worst_riccati()
        );
        let p = self.worst_projection();
        let _ = writeln!(
            s,
            "worst projection identities: annihilation {:.3e}, offset {:.3e}, idempotence {:.3e}",
            p.annihilation, p.offset, p.idempotence
        );
        if !self.psd_outcomes.is_empty() {
            let _ = writeln!(
                s,
                "min eigenvalue of P_t, hard-only: {:.3e} (tol -{PSD_TOL:e})",
                self.min_hard_p_eigenvalue()
            );
        }
        if !self.outcomes.is_empty() {
            let _ = writeln!(
                s,
                "min eigenvalue of P_t, mixed modes (informational): {:.3e}",
                self.min_mixed_p_eigenvalue()
            );
        }
        let failures = self.failures();
        for f in &failures {
            let _ = writeln!(s, "FAIL {f}");
        }
        let _ = writeln!(s, "result: {}", if failures.is_empty() { "PASS" } else { "FAIL" });
        s
    }
}

/// Checks `count` mixed-mode instances and `count` hard-only instances.
pub fn run_campaign(count: usize, seed: u64) -> VerifyReport {
    let outcomes: Vec<_> = (0..count)
        .into_par_iter()
        .map(|i| verify_instance(seed, i, ModeMix::Mixed))
        .collect();
    // hard-only instances use a disjoint block of streams
    let psd_outcomes: Vec<_> = (0..count)
        .into_par_iter()
        .map(|i| verify_instance(seed, (1 << 32) + i, ModeMix::HardOnly))
        .collect();
    let mut warnings = Vec::new();
    if count == 0 {
        log::warn!("verify called with count = 0; nothing was checked");
        warnings.push("count = 0, no instances were checked".to_string());
    }
    VerifyReport {
        seed,
        outcomes,
        psd_outcomes,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_instances_respect_shape() {
        let shape = InstanceShape::default();
        for i in 0..50 {
            let mut rng = instance_rng(9, i);
            let sc = random_scenario(&mut rng, &shape, ModeMix::Mixed).unwrap();
            assert!((1..=5).contains(&sc.fleet.n_agents()));
            assert!((1..=10).contains(&sc.horizon()));
            assert!(sc.fleet.a().norm() <= 1.2 * 5f64.sqrt());
        }
    }

    #[test]
    fn hard_only_has_every_step_hard() {
        let mut rng = instance_rng(1, 0);
        let sc = random_scenario(&mut rng, &InstanceShape::default(), ModeMix::HardOnly).unwrap();
        assert_eq!(sc.schedule.hard_steps().count(), sc.horizon());
    }

    #[test]
    fn small_campaign_passes() {
        let report = run_campaign(10, 5);
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn empty_campaign_warns_and_passes() {
        let report = run_campaign(0, 5);
        assert!(report.passed());
        assert_eq!(report.warnings.len(), 1);
        assert!(report.render().contains("warning"));
    }

    #[test]
    fn report_is_reproducible() {
        assert_eq!(run_campaign(5, 77).render(), run_campaign(5, 77).render());
    }
}
