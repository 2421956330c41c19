//! Independent reference solvers used to check the backward pass.
//!
//! Nothing here calls into [`crate::controller`] or the Cholesky helpers of
//! [`crate::numkernel`]:
//!
//! * [`build_stacked_qp`] / [`solve_kkt`] pose the noise-free problem over
//!   the whole horizon as one equality-constrained QP and solve its KKT
//!   system with a dense LU factorization.
//! * [`unconstrained_riccati`] is the textbook tracking-LQR recursion.
//!
//! With additive noise and no input bounds the optimal feedback is the same
//! as for the noise-free problem (certainty equivalence); noise only shifts
//! the constant term of the value function. Agreement of the noise-free
//! closed-loop trajectory with the QP optimum therefore checks the gains of
//! the stochastic controller.
//!
//! Multiplier convention: the QP objective `½zᵀHz + gᵀz` equals the true
//! trajectory cost up to a constant, and each input-sum row reads
//! `+1ᵀu_t = c_t`. The multiplier `μ_t` of that row then equals the
//! per-step multiplier `λ` of the Lagrangian `uᵀΩu + 2uᵀf + λ(1ᵀu − c)`,
//! so `μ_t / 2` is compared to [`crate::controller::hard_multiplier_half`].

use nalgebra::LU;

use crate::error::{Error, Result};
use crate::model::{ConstraintMode, Scenario};
use crate::numkernel::{Matrix, Vector};

/// Relative KKT residual above which a solve is reported as singular.
const KKT_RESIDUAL_TOL: f64 = 1e-9;

/// Dense QP `min ½zᵀHz + gᵀz  s.t.  Ez = e` over
/// `z = (u_0, …, u_{T−1}, x_1, …, x_T)`.
#[derive(Clone, Debug)]
pub struct StackedQP {
    pub h: Matrix,
    pub g: Vector,
    pub e_mat: Matrix,
    pub e_vec: Vector,
    horizon: usize,
    n: usize,
    m: usize,
    /// `(t, row)` for every input-sum constraint row.
    sum_rows: Vec<(usize, usize)>,
}

impl StackedQP {
    pub fn n_decision(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_constraints(&self) -> usize {
        self.e_mat.nrows()
    }

    fn u_index(&self, t: usize) -> usize {
        t * self.m
    }

    fn x_index(&self, t: usize) -> usize {
        // x_1 starts right after the inputs
        self.horizon * self.m + (t - 1) * self.n
    }

    /// Inputs `u_0 … u_{T−1}` from a decision vector.
    pub fn inputs(&self, z: &Vector) -> Vec<Vector> {
        (0..self.horizon)
            .map(|t| z.rows(self.u_index(t), self.m).into_owned())
            .collect()
    }

    /// States `x_1 … x_T` from a decision vector.
    pub fn states(&self, z: &Vector) -> Vec<Vector> {
        (1..=self.horizon)
            .map(|t| z.rows(self.x_index(t), self.n).into_owned())
            .collect()
    }

    /// Multiplier of the input-sum row at step `t`, if that step is hard.
    pub fn sum_multiplier(&self, multipliers: &Vector, t: usize) -> Option<f64> {
        self.sum_rows
            .iter()
            .find(|(s, _)| *s == t)
            .map(|&(_, row)| multipliers[row])
    }
}

/// Poses the noise-free control problem as a stacked QP. The noise
/// covariance is ignored.
pub fn build_stacked_qp(scenario: &Scenario) -> Result<StackedQP> {
    scenario.validate()?;
    let horizon = scenario.horizon();
    let n = scenario.fleet.n_tot();
    let m = scenario.fleet.m_tot();
    let (a, b) = (scenario.fleet.a(), scenario.fleet.b());
    let cost = &scenario.cost;
    let sched = &scenario.schedule;

    let dim = horizon * (m + n);
    let mut h = Matrix::zeros(dim, dim);
    let mut g = Vector::zeros(dim);
    let mut qp = StackedQP {
        h: Matrix::zeros(0, 0),
        g: Vector::zeros(0),
        e_mat: Matrix::zeros(0, 0),
        e_vec: Vector::zeros(0),
        horizon,
        n,
        m,
        sum_rows: Vec::new(),
    };

    for t in 0..horizon {
        let ui = qp.u_index(t);
        let mut huu = &cost.r * 2.0;
        if let ConstraintMode::Soft { eta } = sched.mode(t) {
            // η(1ᵀu − c)² = η uᵀ11ᵀu − 2ηc 1ᵀu + const
            huu += Matrix::from_element(m, m, 2.0 * eta);
            for k in 0..m {
                g[ui + k] -= 2.0 * eta * sched.target(t);
            }
        }
        h.view_mut((ui, ui), (m, m)).copy_from(&huu);
    }
    for t in 1..=horizon {
        let xi = qp.x_index(t);
        let w = if t == horizon { &cost.q_terminal } else { &cost.q };
        h.view_mut((xi, xi), (n, n)).copy_from(&(w * 2.0));
        let lin = -(w * &cost.refs[t]) * 2.0;
        g.rows_mut(xi, n).copy_from(&lin);
    }

    let n_sum = sched.hard_steps().count();
    let rows = horizon * n + n_sum;
    let mut e_mat = Matrix::zeros(rows, dim);
    let mut e_vec = Vector::zeros(rows);
    for t in 0..horizon {
        // x_{t+1} − A x_t − B u_t = 0, with x_0 moved to the right-hand side
        let r0 = t * n;
        let next = qp.x_index(t + 1);
        for i in 0..n {
            e_mat[(r0 + i, next + i)] = 1.0;
        }
        e_mat
            .view_mut((r0, qp.u_index(t)), (n, m))
            .copy_from(&(-b));
        if t == 0 {
            e_vec.rows_mut(r0, n).copy_from(&(a * &scenario.x0));
        } else {
            let prev = qp.x_index(t);
            e_mat.view_mut((r0, prev), (n, n)).copy_from(&(-a));
        }
    }
    let mut row = horizon * n;
    for t in sched.hard_steps() {
        let ui = qp.u_index(t);
        for k in 0..m {
            e_mat[(row, ui + k)] = 1.0;
        }
        e_vec[row] = sched.target(t);
        qp.sum_rows.push((t, row));
        row += 1;
    }

    qp.h = h;
    qp.g = g;
    qp.e_mat = e_mat;
    qp.e_vec = e_vec;
    Ok(qp)
}

#[derive(Clone, Debug)]
pub struct KktSolution {
    pub decision: Vector,
    pub multipliers: Vector,
}

/// Solves `[H Eᵀ; E 0] [z; λ] = [−g; e]` by dense LU with partial pivoting.
pub fn solve_kkt(qp: &StackedQP) -> Result<KktSolution> {
    let d = qp.h.nrows();
    let c = qp.e_mat.nrows();
    if qp.h.ncols() != d || qp.g.len() != d || qp.e_mat.ncols() != d || qp.e_vec.len() != c {
        return Err(Error::dims(
            "KKT blocks",
            format!("H {d}x{d}, g {d}, E {c}x{d}, e {c}"),
            format!(
                "H {:?}, g {}, E {:?}, e {}",
                qp.h.shape(),
                qp.g.len(),
                qp.e_mat.shape(),
                qp.e_vec.len()
            ),
        ));
    }
    let mut kkt = Matrix::zeros(d + c, d + c);
    kkt.view_mut((0, 0), (d, d)).copy_from(&qp.h);
    kkt.view_mut((d, 0), (c, d)).copy_from(&qp.e_mat);
    kkt.view_mut((0, d), (d, c)).copy_from(&qp.e_mat.transpose());
    let mut rhs = Vector::zeros(d + c);
    rhs.rows_mut(0, d).copy_from(&(-&qp.g));
    rhs.rows_mut(d, c).copy_from(&qp.e_vec);

    let lu = LU::new(kkt.clone());
    let mut sol = lu.solve(&rhs).ok_or(Error::SingularKkt)?;
    // one step of iterative refinement
    let resid = &rhs - &kkt * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularKkt);
    }
    let resid = &rhs - &kkt * &sol;
    let scale = rhs.amax().max(1.0) * (1.0 + kkt.amax() * sol.amax());
    if resid.amax() > KKT_RESIDUAL_TOL * scale {
        return Err(Error::SingularKkt);
    }
    Ok(KktSolution {
        decision: sol.rows(0, d).into_owned(),
        multipliers: sol.rows(d, c).into_owned(),
    })
}

/// Textbook tracking LQR for the all-unconstrained problem.
#[derive(Clone, Debug)]
pub struct RiccatiBaseline {
    pub p: Vec<Matrix>,
    pub s: Vec<Vector>,
    pub k: Vec<Matrix>,
    pub d: Vec<Vector>,
}

/// `P_t = Q + AᵀP A − AᵀP B (R + BᵀP B)⁻¹ BᵀP A`, `P_T = Q_T`, together with
/// the linear term and affine gains. The constraint schedule of the scenario
/// is ignored.
pub fn unconstrained_riccati(scenario: &Scenario) -> Result<RiccatiBaseline> {
    scenario.validate()?;
    let horizon = scenario.horizon();
    let (a, b) = (scenario.fleet.a(), scenario.fleet.b());
    let cost = &scenario.cost;
    let mut p = vec![cost.q_terminal.clone()];
    let mut s = vec![-(&cost.q_terminal * &cost.refs[horizon])];
    let mut k = Vec::with_capacity(horizon);
    let mut d = Vec::with_capacity(horizon);
    for t in (0..horizon).rev() {
        let pn = p.last().unwrap();
        let sn = s.last().unwrap();
        let inv = (&cost.r + b.transpose() * pn * b)
            .try_inverse()
            .ok_or(Error::NotPositiveDefinite)?;
        let k_t = &inv * b.transpose() * pn * a;
        let d_t = -(&inv * b.transpose() * sn);
        let p_t = &cost.q + a.transpose() * pn * a
            - a.transpose() * pn * b * &inv * b.transpose() * pn * a;
        let p_t = (&p_t + p_t.transpose()) * 0.5;
        let s_t = (a.transpose() - a.transpose() * pn * b * &inv * b.transpose()) * sn
            - &cost.q * &cost.refs[t];
        p.push(p_t);
        s.push(s_t);
        k.push(k_t);
        d.push(d_t);
    }
    p.reverse();
    s.reverse();
    k.reverse();
    d.reverse();
    Ok(RiccatiBaseline { p, s, k, d })
}

/// Largest elementwise gaps between the DP closed loop and the QP optimum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeviationReport {
    pub max_input_deviation: f64,
    pub max_state_deviation: f64,
}

impl DeviationReport {
    pub fn max_deviation(&self) -> f64 {
        self.max_input_deviation.max(self.max_state_deviation)
    }
}

/// Runs the synthesized policy with `w ≡ 0` and compares it with the stacked
/// QP solution of the same scenario.
pub fn open_loop_compare(
    scenario: &Scenario,
    schedule: &crate::controller::GainSchedule,
) -> Result<DeviationReport> {
    let horizon = scenario.horizon();
    if schedule.horizon() != horizon {
        return Err(Error::dims("gain schedule horizon", horizon, schedule.horizon()));
    }
    let qp = build_stacked_qp(scenario)?;
    let sol = solve_kkt(&qp)?;
    let qp_u = qp.inputs(&sol.decision);
    let qp_x = qp.states(&sol.decision);

    let (a, b) = (scenario.fleet.a(), scenario.fleet.b());
    let mut x = scenario.x0.clone();
    let mut du = 0.0_f64;
    let mut dx = 0.0_f64;
    for t in 0..horizon {
        let u = schedule.control_at(t, &x)?;
        du = du.max((&u - &qp_u[t]).amax());
        x = a * &x + b * &u;
        dx = dx.max((&x - &qp_x[t]).amax());
    }
    Ok(DeviationReport {
        max_input_deviation: du,
        max_state_deviation: dx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentModel, ConstraintSchedule, CostSpec, FleetModel};

    fn scalar_scenario(n: usize, modes: Vec<ConstraintMode>, targets: Vec<f64>) -> Scenario {
        let horizon = modes.len();
        let fleet = FleetModel::from_agents(&vec![AgentModel::scalar(1.0, 1.0, 0.0); n]).unwrap();
        let cost = CostSpec::constant_reference(
            Matrix::identity(n, n),
            Matrix::identity(n, n),
            Matrix::identity(n, n),
            &Vector::zeros(n),
            horizon,
        );
        Scenario::new(
            fleet,
            cost,
            ConstraintSchedule::new(modes, targets).unwrap(),
            Vector::zeros(n),
            0,
        )
        .unwrap()
    }

    #[test]
    fn counts_for_single_hard_step() {
        let qp = build_stacked_qp(&scalar_scenario(1, vec![ConstraintMode::Hard], vec![1.0])).unwrap();
        assert_eq!(qp.n_decision(), 2);
        assert_eq!(qp.n_constraints(), 2);
    }

    #[test]
    fn unconstrained_has_no_sum_rows() {
        let sc = scalar_scenario(3, vec![ConstraintMode::Unconstrained; 4], vec![0.0; 4]);
        let qp = build_stacked_qp(&sc).unwrap();
        assert_eq!(qp.n_constraints(), 4 * 3);
    }

    #[test]
    fn two_agent_hard_qp_solution() {
        let sc = scalar_scenario(2, vec![ConstraintMode::Hard], vec![2.0]);
        let qp = build_stacked_qp(&sc).unwrap();
        let sol = solve_kkt(&qp).unwrap();
        let u = &qp.inputs(&sol.decision)[0];
        assert!((u[0] - 1.0).abs() < 1e-12);
        assert!((u[1] - 1.0).abs() < 1e-12);
    }

    fn bare_qp(h: Matrix, g: Vector, e_mat: Matrix, e_vec: Vector) -> StackedQP {
        StackedQP {
            h,
            g,
            e_mat,
            e_vec,
            horizon: 0,
            n: 0,
            m: 0,
            sum_rows: Vec::new(),
        }
    }

    #[test]
    fn kkt_unconstrained_quadratic() {
        let qp = bare_qp(
            Matrix::identity(3, 3),
            Vector::from_element(3, -2.0),
            Matrix::zeros(0, 3),
            Vector::zeros(0),
        );
        let sol = solve_kkt(&qp).unwrap();
        assert!((sol.decision - Vector::from_element(3, 2.0)).amax() < 1e-14);
    }

    #[test]
    fn kkt_symmetric_projection() {
        let qp = bare_qp(
            Matrix::identity(2, 2) * 2.0,
            Vector::zeros(2),
            Matrix::from_element(1, 2, 1.0),
            Vector::from_element(1, 2.0),
        );
        let sol = solve_kkt(&qp).unwrap();
        assert!((sol.decision - Vector::from_element(2, 1.0)).amax() < 1e-14);
    }

    #[test]
    fn kkt_random_stationarity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let d = rng.random_range(2..8);
            let c = rng.random_range(0..d);
            let g_half = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let h = &g_half * g_half.transpose() + Matrix::identity(d, d) * 0.1;
            let g = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let e_mat = Matrix::from_fn(c, d, |_, _| rng.random_range(-1.0..1.0));
            let e_vec = Vector::from_fn(c, |_, _| rng.random_range(-1.0..1.0));
            let qp = bare_qp(h, g, e_mat, e_vec);
            let sol = solve_kkt(&qp).unwrap();
            let stat = &qp.h * &sol.decision + &qp.g + qp.e_mat.transpose() * &sol.multipliers;
            assert!(stat.amax() <= 1e-9);
            assert!((&qp.e_mat * &sol.decision - &qp.e_vec).amax() <= 1e-9);
        }
    }

    #[test]
    fn kkt_singular_detected() {
        // duplicated constraint rows make the KKT matrix singular
        let qp = bare_qp(
            Matrix::identity(2, 2),
            Vector::zeros(2),
            Matrix::from_element(2, 2, 1.0),
            Vector::from_vec(vec![1.0, 2.0]),
        );
        assert!(matches!(solve_kkt(&qp), Err(Error::SingularKkt)));
    }

    #[test]
    fn riccati_scalar_step() {
        let sc = scalar_scenario(1, vec![ConstraintMode::Unconstrained], vec![0.0]);
        let base = unconstrained_riccati(&sc).unwrap();
        assert!((base.p[0][(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn riccati_zero_weights() {
        let fleet = FleetModel::from_agents(&[AgentModel::scalar(1.3, 1.0, 0.0)]).unwrap();
        let cost = CostSpec::constant_reference(
            Matrix::zeros(1, 1),
            Matrix::identity(1, 1),
            Matrix::zeros(1, 1),
            &Vector::zeros(1),
            5,
        );
        let sc = Scenario::new(fleet, cost, ConstraintSchedule::unconstrained(5), Vector::zeros(1), 0)
            .unwrap();
        let base = unconstrained_riccati(&sc).unwrap();
        assert!(base.p.iter().all(|p| p[(0, 0)] == 0.0));
    }

    #[test]
    fn riccati_without_control_authority() {
        let fleet = FleetModel::from_agents(&[AgentModel::scalar(0.9, 0.0, 0.0)]).unwrap();
        let cost = CostSpec::constant_reference(
            Matrix::identity(1, 1) * 2.0,
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
            &Vector::zeros(1),
            3,
        );
        let sc = Scenario::new(fleet, cost, ConstraintSchedule::unconstrained(3), Vector::zeros(1), 0)
            .unwrap();
        let base = unconstrained_riccati(&sc).unwrap();
        for t in 0..3 {
            let expected = 2.0 + 0.9 * base.p[t + 1][(0, 0)] * 0.9;
            assert_eq!(base.p[t][(0, 0)], expected);
        }
    }
}
