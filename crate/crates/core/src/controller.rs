//! Backward synthesis of the optimal affine policy under hard, soft and
//! inactive total-input constraints.
//!
//! The value function keeps the quadratic form `V_t(z) = zᵀP_t z + 2s_tᵀz + q_t`.
//! At each step the per-step operators `(Γ_t, γ_t)` depend on the mode:
//!
//! ```text
//! Ω_t = R + BᵀP_{t+1}B
//! Hard:  Γ_t = Ω⁻¹ − Ω⁻¹11ᵀΩ⁻¹ / (1ᵀΩ⁻¹1),   γ_t = Ω⁻¹1 c_t / (1ᵀΩ⁻¹1)
//! Soft:  Γ_t = Π⁻¹,  γ_t = η c_t Π⁻¹1,       Π_t = Ω_t + η 11ᵀ
//! None:  Γ_t = Ω⁻¹,  γ_t = 0
//! ```
//!
//! and the policy is `u_t = −K_t x_t + d_t` with `K_t = Γ_t BᵀP_{t+1}A` and
//! `d_t = −Γ_t Bᵀs_{t+1} + γ_t`.

use crate::error::{Error, Result};
use crate::model::{ConstraintMode, ConstraintSchedule, CostSpec, FleetModel, Scenario};
use crate::numkernel::{
    all_finite, all_finite_vec, min_eigenvalue_symmetric, ones, symmetrize, Matrix, SpdFactor,
    Vector,
};

/// Smallest admissible `1ᵀΩ⁻¹1` on a hard step.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-14;

/// Operators computed at one step of the backward pass.
#[derive(Clone, Debug)]
pub struct StepOperators {
    /// `Ω_t = R + BᵀP_{t+1}B`.
    pub omega: Matrix,
    /// `Π_t = Ω_t + η11ᵀ`, soft steps only.
    pub pi: Option<Matrix>,
    /// `Γ_t`.
    pub gamma_mat: Matrix,
    /// `γ_t`.
    pub gamma_vec: Vector,
}

/// Computes `(Ω_t, Π_t, Γ_t, γ_t)` from the next-step value matrix.
pub fn step_operators(
    p_next: &Matrix,
    mode: ConstraintMode,
    c_t: f64,
    fleet: &FleetModel,
    cost: &CostSpec,
) -> Result<StepOperators> {
    let n = fleet.n_tot();
    if p_next.shape() != (n, n) {
        return Err(Error::dims(
            "P_{t+1}",
            format!("{n}x{n}"),
            format!("{}x{}", p_next.nrows(), p_next.ncols()),
        ));
    }
    let bt_p = fleet.b().transpose() * p_next;
    operators_from(&bt_p, fleet.b(), &cost.r, mode, c_t, 0)
}

fn operators_from(
    bt_p: &Matrix,
    b: &Matrix,
    r: &Matrix,
    mode: ConstraintMode,
    c_t: f64,
    t: usize,
) -> Result<StepOperators> {
    let m = b.ncols();
    let omega = symmetrize(&(r + bt_p * b))?;
    let ones_m = ones(m);

    let (pi, gamma_mat, gamma_vec) = match mode {
        ConstraintMode::Hard => {
            let omega_inv = symmetrize(&SpdFactor::new(&omega)?.inverse())?;
            // Row sums of the symmetric inverse, so that 1ᵀΓ vanishes to rounding.
            let v = &omega_inv * &ones_m;
            let denom = v.sum();
            if !(denom > DEGENERATE_DENOMINATOR) {
                return Err(Error::DegenerateConstraint {
                    t,
                    denominator: denom,
                });
            }
            if m == 1 {
                // the constraint alone fixes u_t = c_t
                (None, Matrix::zeros(1, 1), Vector::from_element(1, c_t))
            } else {
                let gamma_mat = omega_inv - (&v * v.transpose()) / denom;
                let gamma_vec = v * (c_t / denom);
                (None, gamma_mat, gamma_vec)
            }
        }
        ConstraintMode::Soft { eta } => {
            let pi = &omega + Matrix::from_element(m, m, eta);
            let gamma_mat = symmetrize(&SpdFactor::new(&pi)?.inverse())?;
            let gamma_vec = (&gamma_mat * &ones_m) * (eta * c_t);
            (Some(pi), gamma_mat, gamma_vec)
        }
        ConstraintMode::Unconstrained => {
            let gamma_mat = symmetrize(&SpdFactor::new(&omega)?.inverse())?;
            (None, gamma_mat, Vector::zeros(m))
        }
    };
    Ok(StepOperators {
        omega,
        pi,
        gamma_mat,
        gamma_vec,
    })
}

/// Output of the backward pass: value-function terms for `t ∈ [0, T]` and
/// the affine policy for `t ∈ [0, T−1]`.
#[derive(Clone, Debug)]
pub struct GainSchedule {
    pub p: Vec<Matrix>,
    pub s: Vec<Vector>,
    pub q: Vec<f64>,
    pub k: Vec<Matrix>,
    pub d: Vec<Vector>,
    pub operators: Vec<StepOperators>,
    pub modes: ConstraintSchedule,
}

/// Runs the backward recursion for `P_t`, `s_t`, `q_t` and the gains.
pub fn backward_pass(scenario: &Scenario) -> Result<GainSchedule> {
    scenario.validate()?;
    let fleet = &scenario.fleet;
    let cost = &scenario.cost;
    let sched = &scenario.schedule;
    let horizon = scenario.horizon();
    let (a, b, w) = (fleet.a(), fleet.b(), fleet.w());
    let at = a.transpose();
    let bt = b.transpose();

    let r_term = &cost.refs[horizon];
    let mut p = vec![Matrix::zeros(0, 0); horizon + 1];
    let mut s = vec![Vector::zeros(0); horizon + 1];
    let mut q = vec![0.0; horizon + 1];
    let mut k = vec![Matrix::zeros(0, 0); horizon];
    let mut d = vec![Vector::zeros(0); horizon];
    let mut operators = Vec::with_capacity(horizon);

    p[horizon] = symmetrize(&cost.q_terminal)?;
    s[horizon] = -(&cost.q_terminal * r_term);
    q[horizon] = (&cost.q_terminal * r_term).dot(r_term);

    for t in (0..horizon).rev() {
        let p_next = &p[t + 1];
        let s_next = &s[t + 1];
        let mode = sched.mode(t);
        let c_t = sched.target(t);

        let bt_p = &bt * p_next;
        let ops = operators_from(&bt_p, b, &cost.r, mode, c_t, t)?;
        let bt_p_a = &bt_p * a;
        let bt_s = &bt * s_next;

        let gain = &ops.gamma_mat * &bt_p_a;
        let ff = &ops.gamma_vec - &ops.gamma_mat * &bt_s;

        // AᵀP_{t+1}BΓ_tBᵀP_{t+1}A = (BᵀP_{t+1}A)ᵀ K_t
        let p_t = symmetrize(&(&cost.q + &at * p_next * a - bt_p_a.transpose() * &gain))?;
        // [Aᵀ − AᵀPBΓBᵀ]s + AᵀPBγ = Aᵀs + (BᵀPA)ᵀ d
        let r_t = &cost.refs[t];
        let q_r = &cost.q * r_t;
        let s_t = &at * s_next + bt_p_a.transpose() * &ff - &q_r;

        if !(all_finite(&p_t) && all_finite_vec(&s_t)) {
            return Err(Error::NonFiniteRecursion { t });
        }

        // Constant term: the Bellman objective at z = 0 with u = d_t.
        let noise = w.component_mul(p_next).sum();
        let mut stage = (&ops.omega * &ff).dot(&ff) + 2.0 * bt_s.dot(&ff);
        if let ConstraintMode::Soft { eta } = mode {
            let miss = ff.sum() - c_t;
            stage += eta * miss * miss;
        }
        let q_t = q[t + 1] + q_r.dot(r_t) + noise + stage;
        if !q_t.is_finite() {
            return Err(Error::NonFiniteRecursion { t });
        }

        p[t] = p_t;
        s[t] = s_t;
        q[t] = q_t;
        k[t] = gain;
        d[t] = ff;
        operators.push(ops);
    }
    operators.reverse();

    Ok(GainSchedule {
        p,
        s,
        q,
        k,
        d,
        operators,
        modes: sched.clone(),
    })
}

impl GainSchedule {
    pub fn horizon(&self) -> usize {
        self.k.len()
    }

    pub fn n_tot(&self) -> usize {
        self.p[0].nrows()
    }

    pub fn m_tot(&self) -> usize {
        self.d.first().map_or(0, |d| d.len())
    }

    /// `u_t = −K_t x + d_t`.
    pub fn control_at(&self, t: usize, x: &Vector) -> Result<Vector> {
        if t >= self.horizon() {
            return Err(Error::IndexOutOfRange {
                t,
                horizon: self.horizon(),
            });
        }
        if x.len() != self.n_tot() {
            return Err(Error::dims("control_at state", self.n_tot(), x.len()));
        }
        Ok(&self.d[t] - &self.k[t] * x)
    }

    /// Expected total cost `x0ᵀP_0x0 + 2s_0ᵀx0 + q_0` under this policy.
    pub fn predicted_cost(&self, x0: &Vector) -> Result<f64> {
        if x0.len() != self.n_tot() {
            return Err(Error::dims("predicted_cost state", self.n_tot(), x0.len()));
        }
        Ok((&self.p[0] * x0).dot(x0) + 2.0 * self.s[0].dot(x0) + self.q[0])
    }

    /// Smallest eigenvalue of each `P_t`, `t ∈ [0, T]`.
    pub fn p_min_eigenvalues(&self) -> Result<Vec<f64>> {
        self.p.iter().map(min_eigenvalue_symmetric).collect()
    }
}

/// Half the Lagrange multiplier of the hard constraint at step `t` for state
/// `x`: `λ/2 = −(1ᵀΩ⁻¹f + c_t) / (1ᵀΩ⁻¹1)` with `f = BᵀP_{t+1}Ax + Bᵀs_{t+1}`.
///
/// Sign convention: the multiplier enters the Lagrangian as
/// `+λ (1ᵀu − c_t)` on top of the (unhalved) stage objective.
pub fn hard_multiplier_half(
    scenario: &Scenario,
    schedule: &GainSchedule,
    t: usize,
    x: &Vector,
) -> Result<f64> {
    if t >= schedule.horizon() {
        return Err(Error::IndexOutOfRange {
            t,
            horizon: schedule.horizon(),
        });
    }
    let fleet = &scenario.fleet;
    let bt = fleet.b().transpose();
    let f = &bt * &schedule.p[t + 1] * fleet.a() * x + &bt * &schedule.s[t + 1];
    let factor = SpdFactor::new(&schedule.operators[t].omega)?;
    let omega_inv_one = factor.solve_vec(&ones(fleet.m_tot()))?;
    let omega_inv_f = factor.solve_vec(&f)?;
    Ok(-(omega_inv_f.sum() + schedule.modes.target(t)) / omega_inv_one.sum())
}
