//! Compares the three constraint strategies on the same fleet, noise and
//! solar profile.

use eqlq::demo::{run_demo, DemoSetup, Strategy};

fn main() -> eqlq::Result<()> {
    let setup = DemoSetup::default();
    println!("strategy       min 1'u [kW]   tracking off S [kWh]   terminal err a/b [kWh]");
    for strategy in [Strategy::Hard, Strategy::Intermittent, Strategy::Switched { eta: 1.0 }] {
        let m = run_demo(&setup, strategy)?.metrics;
        println!(
            "{:<14} {:>12.2} {:>22.3} {:>13.2} / {:.2}",
            strategy.label(),
            m.most_negative_total_power,
            m.off_window_tracking_error,
            m.alpha_terminal_error,
            m.beta_terminal_error
        );
    }
    Ok(())
}
