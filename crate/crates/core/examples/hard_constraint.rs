//! Fleet of 50 batteries whose total charging power must equal the solar
//! surplus at every hour, including zero at night.

use eqlq::demo::{run_demo, DemoSetup, Strategy};

fn main() -> eqlq::Result<()> {
    let run = run_demo(&DemoSetup::default(), Strategy::Hard)?;
    let totals = run.trajectory.total_inputs();
    println!("hour   c_t [kW]   1'u [kW]   alpha SoC   beta SoC");
    for t in 0..run.scenario.horizon() {
        println!(
            "{t:>4} {:>10.3} {:>10.3} {:>11.2} {:>10.2}",
            run.scenario.schedule.target(t),
            totals[t],
            run.alpha_soc[t + 1],
            run.beta_soc[t + 1]
        );
    }
    println!("max scaled residual {:.2e}", run.metrics.max_scaled_hard_residual);
    Ok(())
}
