//! Expected cost from the value function against a Monte Carlo estimate.

use eqlq::controller::backward_pass;
use eqlq::demo::{DemoSetup, Strategy};
use eqlq::simulator::monte_carlo;

fn main() -> eqlq::Result<()> {
    let setup = DemoSetup {
        n_agents: 10,
        peak_kw: 30.0,
        ..DemoSetup::default()
    };
    let sc = setup.scenario(Strategy::Switched { eta: 1.0 })?;
    let gains = backward_pass(&sc)?;
    let predicted = gains.predicted_cost(&sc.x0)?;
    for paths in [100, 1_000, 10_000] {
        let mc = monte_carlo(&sc, &gains, paths, 1)?;
        println!(
            "{paths:>6} paths: mean {:.2} +/- {:.2}, predicted {predicted:.2}, z = {:.2}",
            mc.mean_cost,
            mc.cost_std_error,
            (mc.mean_cost - predicted) / mc.cost_std_error
        );
    }
    Ok(())
}
