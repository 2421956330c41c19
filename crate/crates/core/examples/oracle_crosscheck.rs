//! Checks the backward pass against the full-horizon KKT solve and the
//! textbook Riccati recursion on a handful of random problems.

use eqlq::controller::backward_pass;
use eqlq::oracle::open_loop_compare;
use eqlq::verify::{instance_rng, multiplier_gap, random_scenario, riccati_gap, InstanceShape, ModeMix};

fn main() -> eqlq::Result<()> {
    let shape = InstanceShape::default();
    for i in 0..8 {
        let sc = random_scenario(&mut instance_rng(42, i), &shape, ModeMix::Mixed)?;
        let gains = backward_pass(&sc)?;
        let dev = open_loop_compare(&sc, &gains)?;
        println!(
            "N={} T={:>2} hard={:>2}  trajectory gap {:.1e}  multiplier gap {:.1e}  riccati gap {:.1e}",
            sc.fleet.n_agents(),
            sc.horizon(),
            sc.schedule.hard_steps().count(),
            dev.max_deviation(),
            multiplier_gap(&sc, &gains)?,
            riccati_gap(&sc)?
        );
    }
    Ok(())
}
