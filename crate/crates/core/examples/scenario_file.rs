//! Loads a TOML scenario, synthesizes the controller and writes the CSV
//! bundle the `simulate` subcommand produces.
//!
//! cargo run --example scenario_file -- scenarios/small_csv.toml /tmp/eqlq-out

use std::path::PathBuf;

use eqlq::commands::simulate;

fn main() -> eqlq::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenario = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/small_csv.toml"));
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("eqlq-scenario-file"));
    let o = simulate(&scenario, 500, 0, &out)?;
    println!(
        "mean cost {:.3} (predicted {:.3}), outputs in {}",
        o.summary.mean_cost,
        o.predicted_cost,
        out.display()
    );
    Ok(())
}
