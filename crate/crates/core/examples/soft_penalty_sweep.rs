//! Off-window mismatch `|1'u_t - c_t|` of the switched strategy as the soft
//! weight grows.

use eqlq::controller::backward_pass;
use eqlq::demo::{DemoSetup, Strategy};
use eqlq::model::ConstraintMode;
use eqlq::simulator::rollout;

fn main() -> eqlq::Result<()> {
    let setup = DemoSetup::default();
    for eta in [0.0, 1e-2, 1.0, 1e2, 1e4, 1e6] {
        let sc = setup.scenario(Strategy::Switched { eta })?;
        let gains = backward_pass(&sc)?;
        let traj = rollout(&sc, &gains, setup.seed)?;
        let worst = (0..sc.horizon())
            .filter(|&t| matches!(sc.schedule.mode(t), ConstraintMode::Soft { .. }))
            .map(|t| traj.residuals[t].abs())
            .fold(0.0, f64::max);
        let min_power = traj.total_inputs().into_iter().fold(f64::INFINITY, f64::min);
        println!("eta {eta:>8.0e}: max soft residual {worst:>10.4e} kW, min total power {min_power:>9.2} kW");
    }
    Ok(())
}
