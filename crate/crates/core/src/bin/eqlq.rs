use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eqlq::commands;
use eqlq::demo::{DemoSetup, Strategy};

#[derive(Parser)]
#[command(name = "eqlq", version, about = "Constrained stochastic LQ control for agent fleets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Hard,
    Intermittent,
    Switched,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the gain schedule of a scenario file.
    Synthesize {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize, then run Monte Carlo rollouts.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-check the controller against the reference solvers on random instances.
    Verify {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the backward pass and the stacked KKT solve.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [100, 200])]
        t_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20])]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Fleet size for the stacked KKT timings; 0 skips them.
        #[arg(long, default_value_t = 4)]
        oracle_agents: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the 50-battery solar absorption example.
    Demo {
        #[arg(long, value_enum)]
        variant: Variant,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = DemoSetup::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = DemoSetup::default().peak_kw)]
        peak_kw: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> eqlq::Result<ExitCode> {
    match cli.command {
        Command::Synthesize { scenario, out } => {
            let o = commands::synthesize(&scenario, &out)?;
            println!(
                "synthesized {} steps, min eigenvalue of P_t {:.3e}, {} capacity warnings",
                o.horizon, o.min_p_eigenvalue, o.capacity_warnings
            );
        }
        Command::Simulate {
            scenario,
            paths,
            seed,
            out,
        } => {
            let o = commands::simulate(&scenario, paths, seed, &out)?;
            println!(
                "{} paths: mean cost {:.6} ± {:.6} (predicted {:.6}), max hard residual {:.3e}",
                o.summary.n_paths,
                o.summary.mean_cost,
                o.summary.cost_std_error,
                o.predicted_cost,
                o.summary.max_abs_hard_residual
            );
        }
        Command::Verify { count, seed } => {
            let report = commands::verify(count, seed);
            print!("{}", report.render());
            if !report.passed() {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Bench {
            t_list,
            n_list,
            reps,
            oracle_agents,
            out,
        } => {
            let oracle = (oracle_agents > 0).then_some(oracle_agents);
            for r in commands::bench(&t_list, &n_list, reps, oracle, &out)? {
                println!(
                    "{:<14} T={:<5} N={:<4} median {:.6} s",
                    r.solver, r.horizon, r.agents, r.median_seconds
                );
            }
        }
        Command::Demo {
            variant,
            eta,
            seed,
            peak_kw,
            out,
        } => {
            let strategy = match variant {
                Variant::Hard => Strategy::Hard,
                Variant::Intermittent => Strategy::Intermittent,
                Variant::Switched => Strategy::Switched { eta },
            };
            let setup = DemoSetup {
                seed,
                peak_kw,
                ..DemoSetup::default()
            };
            let m = commands::demo(&setup, strategy, &out)?;
            for (k, v) in commands::demo_metric_rows(&m) {
                println!("{k}: {v:.6e}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
