//! Heterogeneous agents with vector states and inputs: two batteries with a
//! thermal mode and two inputs each, plus one scalar battery, with
//! correlated noise and a total-power requirement on every other step.

use eqlq::controller::backward_pass;
use eqlq::model::{
    AgentDims, ConstraintMode, ConstraintSchedule, CostSpec, FleetModel, Scenario,
};
use eqlq::numkernel::{block_diag, Matrix, Vector};
use eqlq::simulator::monte_carlo;
use nalgebra::dmatrix;

fn main() -> eqlq::Result<()> {
    let two_state_a = dmatrix![0.98, 0.02; 0.0, 0.9];
    let two_state_b = dmatrix![1.0, 0.5; 0.1, 0.0];
    let a = block_diag(&[two_state_a.clone(), two_state_a, dmatrix![0.97]])?;
    let b = block_diag(&[two_state_b.clone(), two_state_b, dmatrix![1.0]])?;
    let dims = vec![
        AgentDims { state: 2, input: 2 },
        AgentDims { state: 2, input: 2 },
        AgentDims { state: 1, input: 1 },
    ];
    let mut w = Matrix::identity(5, 5) * 0.2;
    w[(0, 2)] = 0.1;
    w[(2, 0)] = 0.1;
    let fleet = FleetModel::new(dims, a, b, w)?;

    let horizon = 12;
    let target = Vector::from_vec(vec![10.0, 0.0, 5.0, 0.0, 8.0]);
    let cost = CostSpec::constant_reference(
        Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.1, 1.0, 0.1, 1.0])),
        Matrix::identity(5, 5) * 0.05,
        Matrix::identity(5, 5) * 4.0,
        &target,
        horizon,
    );
    let modes = (0..horizon)
        .map(|t| if t % 2 == 0 { ConstraintMode::Hard } else { ConstraintMode::Unconstrained })
        .collect();
    let schedule = ConstraintSchedule::new(modes, vec![1.5; horizon])?;
    let sc = Scenario::new(fleet, cost, schedule, Vector::zeros(5), 3)?;

    let gains = backward_pass(&sc)?;
    let mc = monte_carlo(&sc, &gains, 2_000, 3)?;
    println!("predicted cost {:.3}", gains.predicted_cost(&sc.x0)?);
    println!("sampled cost   {:.3} +/- {:.3}", mc.mean_cost, mc.cost_std_error);
    println!("max hard residual {:.2e}", mc.max_abs_hard_residual);
    let terminal: Vec<String> = mc.mean_states[horizon].iter().map(|v| format!("{v:.2}")).collect();
    println!("mean terminal state [{}], target {:?}", terminal.join(", "), target.as_slice());
    Ok(())
}
