//! Fleet, cost and constraint-schedule types.

mod fleet;
mod solar;

pub use fleet::{sample_fleet, FleetParams, FleetSample};
pub use solar::{capacity_violations, schedule_from_profile, synthetic_solar, SolarProfile};

use crate::error::{Error, Result};
use crate::numkernel::{
    all_finite, all_finite_vec, block_diag, min_eigenvalue_symmetric, ones, relative_asymmetry,
    Matrix, Vector, SYMMETRY_TOL,
};

/// Eigenvalue slack used when validating PSD weight and covariance matrices.
const PSD_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentDims {
    pub state: usize,
    pub input: usize,
}

/// Dynamics of one agent: `x⁺ = A x + B u + w`, `w ~ (0, W)`.
#[derive(Clone, Debug)]
pub struct AgentModel {
    pub a: Matrix,
    pub b: Matrix,
    pub w: Matrix,
}

impl AgentModel {
    pub fn scalar(a: f64, b: f64, noise_variance: f64) -> Self {
        Self {
            a: Matrix::from_element(1, 1, a),
            b: Matrix::from_element(1, 1, b),
            w: Matrix::from_element(1, 1, noise_variance),
        }
    }
}

/// Stacked N-agent system with block-diagonal `A` and `B`.
#[derive(Clone, Debug)]
pub struct FleetModel {
    agent_dims: Vec<AgentDims>,
    a: Matrix,
    b: Matrix,
    w: Matrix,
}

impl FleetModel {
    /// Assembles the fleet from per-agent models. The noise covariance is the
    /// block diagonal of the per-agent covariances.
    pub fn from_agents(agents: &[AgentModel]) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::EmptyInput("fleet needs at least one agent"));
        }
        let mut dims = Vec::with_capacity(agents.len());
        for (i, ag) in agents.iter().enumerate() {
            let n = ag.a.nrows();
            if ag.a.ncols() != n || ag.b.nrows() != n || ag.w.shape() != (n, n) {
                return Err(Error::Validation(format!(
                    "agent {i}: inconsistent block shapes A {:?}, B {:?}, W {:?}",
                    ag.a.shape(),
                    ag.b.shape(),
                    ag.w.shape()
                )));
            }
            dims.push(AgentDims {
                state: n,
                input: ag.b.ncols(),
            });
        }
        let a = block_diag(&agents.iter().map(|g| g.a.clone()).collect::<Vec<_>>())?;
        let b = block_diag(&agents.iter().map(|g| g.b.clone()).collect::<Vec<_>>())?;
        let w = block_diag(&agents.iter().map(|g| g.w.clone()).collect::<Vec<_>>())?;
        Self::new(dims, a, b, w)
    }

    /// Builds a fleet from already-stacked matrices. `A`, `B` and `W` need not
    /// be block diagonal; the per-agent dimensions are kept for bookkeeping.
    pub fn new(agent_dims: Vec<AgentDims>, a: Matrix, b: Matrix, w: Matrix) -> Result<Self> {
        if agent_dims.is_empty() {
            return Err(Error::EmptyInput("fleet needs at least one agent"));
        }
        let n: usize = agent_dims.iter().map(|d| d.state).sum();
        let m: usize = agent_dims.iter().map(|d| d.input).sum();
        if n == 0 || m == 0 {
            return Err(Error::Validation(
                "fleet must have at least one state and one input".into(),
            ));
        }
        if a.shape() != (n, n) {
            return Err(Error::dims("fleet A", format!("{n}x{n}"), fmt_shape(&a)));
        }
        if b.shape() != (n, m) {
            return Err(Error::dims("fleet B", format!("{n}x{m}"), fmt_shape(&b)));
        }
        if w.shape() != (n, n) {
            return Err(Error::dims("fleet W", format!("{n}x{n}"), fmt_shape(&w)));
        }
        if !(all_finite(&a) && all_finite(&b) && all_finite(&w)) {
            return Err(Error::Validation("fleet matrices contain non-finite entries".into()));
        }
        check_psd(&w, "noise covariance W")?;
        Ok(Self {
            agent_dims,
            a,
            b,
            w,
        })
    }

    pub fn agent_dims(&self) -> &[AgentDims] {
        &self.agent_dims
    }

    pub fn n_agents(&self) -> usize {
        self.agent_dims.len()
    }

    pub fn n_tot(&self) -> usize {
        self.a.nrows()
    }

    pub fn m_tot(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    /// Offset of each agent's block in the stacked state vector.
    pub fn state_offsets(&self) -> Vec<usize> {
        self.agent_dims
            .iter()
            .scan(0, |acc, d| {
                let off = *acc;
                *acc += d.state;
                Some(off)
            })
            .collect()
    }

    /// Same fleet with the noise switched off.
    pub fn without_noise(&self) -> Self {
        let mut out = self.clone();
        out.w.fill(0.0);
        out
    }
}

fn fmt_shape(m: &Matrix) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn check_psd(m: &Matrix, what: &str) -> Result<()> {
    let asym = relative_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::Validation(format!(
            "{what} is not symmetric (relative asymmetry {asym:e})"
        )));
    }
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let lo = min_eigenvalue_symmetric(m)?;
    if lo < -PSD_SLACK * scale {
        return Err(Error::Validation(format!(
            "{what} is not positive semidefinite (min eigenvalue {lo:e})"
        )));
    }
    Ok(())
}

/// Quadratic tracking weights and the reference trajectory `r_0 … r_T`.
#[derive(Clone, Debug)]
pub struct CostSpec {
    pub q: Matrix,
    pub r: Matrix,
    pub q_terminal: Matrix,
    pub refs: Vec<Vector>,
}

impl CostSpec {
    /// Constant reference `target` over `horizon + 1` samples.
    pub fn constant_reference(
        q: Matrix,
        r: Matrix,
        q_terminal: Matrix,
        target: &Vector,
        horizon: usize,
    ) -> Self {
        Self {
            q,
            r,
            q_terminal,
            refs: vec![target.clone(); horizon + 1],
        }
    }

    fn validate(&self, n: usize, m: usize, horizon: usize) -> Result<()> {
        if self.q.shape() != (n, n) {
            return Err(Error::dims("cost Q", format!("{n}x{n}"), fmt_shape(&self.q)));
        }
        if self.q_terminal.shape() != (n, n) {
            return Err(Error::dims(
                "cost Q_T",
                format!("{n}x{n}"),
                fmt_shape(&self.q_terminal),
            ));
        }
        if self.r.shape() != (m, m) {
            return Err(Error::dims("cost R", format!("{m}x{m}"), fmt_shape(&self.r)));
        }
        if self.refs.len() != horizon + 1 {
            return Err(Error::dims(
                "reference trajectory length",
                horizon + 1,
                self.refs.len(),
            ));
        }
        for (t, r) in self.refs.iter().enumerate() {
            if r.len() != n {
                return Err(Error::dims("reference r_t", n, r.len()));
            }
            if !all_finite_vec(r) {
                return Err(Error::Validation(format!("reference r_{t} is not finite")));
            }
        }
        if !(all_finite(&self.q) && all_finite(&self.r) && all_finite(&self.q_terminal)) {
            return Err(Error::Validation("cost weights contain non-finite entries".into()));
        }
        check_psd(&self.q, "state weight Q")?;
        check_psd(&self.q_terminal, "terminal weight Q_T")?;
        let asym = relative_asymmetry(&self.r);
        if asym > SYMMETRY_TOL {
            return Err(Error::Validation("input weight R is not symmetric".into()));
        }
        if min_eigenvalue_symmetric(&self.r)? <= 0.0 {
            return Err(Error::Validation("input weight R is not positive definite".into()));
        }
        Ok(())
    }
}

/// How the total-input requirement is treated at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConstraintMode {
    /// `1ᵀu = c` enforced exactly.
    Hard,
    /// Penalty `η (1ᵀu − c)²` added to the stage cost.
    Soft { eta: f64 },
    /// No coupling between agents.
    Unconstrained,
}

impl ConstraintMode {
    pub fn label(&self) -> &'static str {
        match self {
            ConstraintMode::Hard => "hard",
            ConstraintMode::Soft { .. } => "soft",
            ConstraintMode::Unconstrained => "none",
        }
    }

    pub fn is_hard(&self) -> bool {
        matches!(self, ConstraintMode::Hard)
    }
}

/// Per-step constraint modes and targets `c_t` for `t ∈ [0, T−1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSchedule {
    modes: Vec<ConstraintMode>,
    targets: Vec<f64>,
}

impl ConstraintSchedule {
    pub fn new(modes: Vec<ConstraintMode>, targets: Vec<f64>) -> Result<Self> {
        if modes.len() != targets.len() {
            return Err(Error::dims("constraint schedule", modes.len(), targets.len()));
        }
        for (t, (m, c)) in modes.iter().zip(&targets).enumerate() {
            if !c.is_finite() {
                return Err(Error::Validation(format!("target c_{t} is not finite")));
            }
            if let ConstraintMode::Soft { eta } = m {
                if !(eta.is_finite() && *eta >= 0.0) {
                    return Err(Error::Validation(format!(
                        "soft penalty at step {t} must be finite and nonnegative, got {eta}"
                    )));
                }
            }
        }
        Ok(Self { modes, targets })
    }

    pub fn uniform(mode: ConstraintMode, targets: Vec<f64>) -> Result<Self> {
        Self::new(vec![mode; targets.len()], targets)
    }

    pub fn unconstrained(horizon: usize) -> Self {
        Self {
            modes: vec![ConstraintMode::Unconstrained; horizon],
            targets: vec![0.0; horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[ConstraintMode] {
        &self.modes
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn mode(&self, t: usize) -> ConstraintMode {
        self.modes[t]
    }

    pub fn target(&self, t: usize) -> f64 {
        self.targets[t]
    }

    /// Steps where the hard constraint is active.
    pub fn hard_steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.modes
            .iter()
            .enumerate()
            .filter(|(_, m)| m.is_hard())
            .map(|(t, _)| t)
    }
}

/// Membership label used for the two SoC target classes of the demand
/// response fleet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AgentClass {
    Alpha,
    Beta,
}

/// A complete finite-horizon problem instance.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub fleet: FleetModel,
    pub cost: CostSpec,
    pub schedule: ConstraintSchedule,
    pub x0: Vector,
    pub seed: u64,
    /// Optional per-agent class labels, used only for reporting.
    pub classes: Option<Vec<AgentClass>>,
}

impl Scenario {
    pub fn new(
        fleet: FleetModel,
        cost: CostSpec,
        schedule: ConstraintSchedule,
        x0: Vector,
        seed: u64,
    ) -> Result<Self> {
        let s = Self {
            fleet,
            cost,
            schedule,
            x0,
            seed,
            classes: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_classes(mut self, classes: Vec<AgentClass>) -> Result<Self> {
        if classes.len() != self.fleet.n_agents() {
            return Err(Error::dims("agent classes", self.fleet.n_agents(), classes.len()));
        }
        self.classes = Some(classes);
        Ok(self)
    }

    pub fn horizon(&self) -> usize {
        self.schedule.len()
    }

    pub fn validate(&self) -> Result<()> {
        let horizon = self.horizon();
        if horizon == 0 {
            return Err(Error::Validation("empty horizon (T must be at least 1)".into()));
        }
        let n = self.fleet.n_tot();
        let m = self.fleet.m_tot();
        self.cost.validate(n, m, horizon)?;
        if self.x0.len() != n {
            return Err(Error::dims("initial state", n, self.x0.len()));
        }
        if !all_finite_vec(&self.x0) {
            return Err(Error::Validation("initial state is not finite".into()));
        }
        Ok(())
    }

    /// Same scenario with a different constraint schedule.
    pub fn with_schedule(&self, schedule: ConstraintSchedule) -> Result<Self> {
        let mut s = self.clone();
        s.schedule = schedule;
        s.validate()?;
        Ok(s)
    }

    pub fn without_noise(&self) -> Self {
        let mut s = self.clone();
        s.fleet = s.fleet.without_noise();
        s
    }
}

fn weighted_sq(v: &Vector, w: &Matrix) -> f64 {
    (w * v).dot(v)
}

/// Running cost `|x − r_t|²_Q + |u|²_R`, plus `η(1ᵀu − c_t)²` on soft steps.
pub fn stage_cost(
    x: &Vector,
    u: &Vector,
    t: usize,
    cost: &CostSpec,
    schedule: &ConstraintSchedule,
) -> Result<f64> {
    if t >= schedule.len() {
        return Err(Error::IndexOutOfRange {
            t,
            horizon: schedule.len(),
        });
    }
    if x.len() != cost.q.nrows() {
        return Err(Error::dims("stage cost state", cost.q.nrows(), x.len()));
    }
    if u.len() != cost.r.nrows() {
        return Err(Error::dims("stage cost input", cost.r.nrows(), u.len()));
    }
    let dx = x - &cost.refs[t];
    let mut c = weighted_sq(&dx, &cost.q) + weighted_sq(u, &cost.r);
    if let ConstraintMode::Soft { eta } = schedule.mode(t) {
        let miss = u.sum() - schedule.target(t);
        c += eta * miss * miss;
    }
    Ok(c)
}

/// Terminal cost `|x − r_T|²_{Q_T}`.
pub fn terminal_cost(x: &Vector, cost: &CostSpec) -> Result<f64> {
    if x.len() != cost.q_terminal.nrows() {
        return Err(Error::dims("terminal cost state", cost.q_terminal.nrows(), x.len()));
    }
    let r = cost.refs.last().ok_or(Error::EmptyInput("reference trajectory"))?;
    Ok(weighted_sq(&(x - r), &cost.q_terminal))
}

/// Total input `1ᵀu`.
pub fn total_input(u: &Vector) -> f64 {
    ones(u.len()).dot(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_cost(q: f64, r: f64, refs: Vec<f64>) -> CostSpec {
        CostSpec {
            q: Matrix::from_element(1, 1, q),
            r: Matrix::from_element(1, 1, r),
            q_terminal: Matrix::from_element(1, 1, q),
            refs: refs.into_iter().map(|v| Vector::from_element(1, v)).collect(),
        }
    }

    fn v(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn stage_cost_zero_at_reference() {
        let cost = scalar_cost(1.0, 1.0, vec![5.0, 5.0]);
        let sched = ConstraintSchedule::unconstrained(1);
        assert_eq!(stage_cost(&v(5.0), &v(0.0), 0, &cost, &sched).unwrap(), 0.0);
    }

    #[test]
    fn stage_cost_unconstrained_and_soft() {
        let cost = scalar_cost(1.0, 1.0, vec![0.0, 0.0]);
        let none = ConstraintSchedule::unconstrained(1);
        assert_eq!(stage_cost(&v(2.0), &v(3.0), 0, &cost, &none).unwrap(), 13.0);
        let soft = ConstraintSchedule::uniform(ConstraintMode::Soft { eta: 2.0 }, vec![1.0]).unwrap();
        assert_eq!(stage_cost(&v(2.0), &v(3.0), 0, &cost, &soft).unwrap(), 21.0);
        // hard steps carry no penalty term
        let hard = ConstraintSchedule::uniform(ConstraintMode::Hard, vec![1.0]).unwrap();
        assert_eq!(stage_cost(&v(2.0), &v(3.0), 0, &cost, &hard).unwrap(), 13.0);
    }

    #[test]
    fn stage_cost_errors() {
        let cost = scalar_cost(1.0, 1.0, vec![0.0, 0.0]);
        let sched = ConstraintSchedule::unconstrained(1);
        assert!(matches!(
            stage_cost(&Vector::zeros(2), &v(0.0), 0, &cost, &sched),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            stage_cost(&v(0.0), &v(0.0), 1, &cost, &sched),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn terminal_cost_uses_last_reference() {
        let cost = scalar_cost(2.0, 1.0, vec![0.0, 3.0]);
        assert_eq!(terminal_cost(&v(1.0), &cost).unwrap(), 8.0);
    }

    #[test]
    fn schedule_rejects_negative_eta() {
        assert!(ConstraintSchedule::uniform(ConstraintMode::Soft { eta: -1.0 }, vec![0.0]).is_err());
        assert!(ConstraintSchedule::new(vec![ConstraintMode::Hard], vec![]).is_err());
    }

    #[test]
    fn fleet_from_agents_is_block_diagonal() {
        let agents = vec![
            AgentModel::scalar(0.9, 1.0, 0.5),
            AgentModel {
                a: Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
                b: Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
                w: Matrix::identity(2, 2),
            },
        ];
        let fleet = FleetModel::from_agents(&agents).unwrap();
        assert_eq!(fleet.n_tot(), 3);
        assert_eq!(fleet.m_tot(), 2);
        assert_eq!(fleet.a()[(1, 2)], 0.1);
        assert_eq!(fleet.a()[(0, 1)], 0.0);
        assert_eq!(fleet.b()[(2, 1)], 1.0);
        assert_eq!(fleet.b()[(0, 1)], 0.0);
        assert_eq!(fleet.state_offsets(), vec![0, 1]);
    }

    #[test]
    fn fleet_rejects_indefinite_noise() {
        let bad = AgentModel::scalar(1.0, 1.0, -1.0);
        assert!(matches!(
            FleetModel::from_agents(&[bad]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn scenario_rejects_empty_horizon() {
        let fleet = FleetModel::from_agents(&[AgentModel::scalar(1.0, 1.0, 0.0)]).unwrap();
        let cost = scalar_cost(1.0, 1.0, vec![0.0]);
        let err = Scenario::new(fleet, cost, ConstraintSchedule::unconstrained(0), v(0.0), 0)
            .unwrap_err();
        assert!(err.to_string().contains("empty horizon"));
    }

    #[test]
    fn scenario_rejects_singular_r() {
        let fleet = FleetModel::from_agents(&[AgentModel::scalar(1.0, 1.0, 0.0)]).unwrap();
        let cost = scalar_cost(1.0, 0.0, vec![0.0, 0.0]);
        assert!(Scenario::new(fleet, cost, ConstraintSchedule::unconstrained(1), v(0.0), 0).is_err());
    }
}
