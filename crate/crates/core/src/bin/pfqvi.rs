use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pfqvi::commands::{self, Context, ErrorReport};
use pfqvi::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "pfqvi",
    version,
    about = "Priority-fee impulse control: solve, simulate and map"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the QVI and write value, policy and residual report.
    Solve(Common),
    /// Monte Carlo paths under the solved policy.
    Simulate(Common),
    /// Exercise/continuation maps at each (t, q).
    Regions(Common),
    /// Chosen fee level maps at each (t, q).
    Fees(Common),
    /// Value norm over nested fee ladders.
    Sweep(Common),
    /// Optimal against uniformly drawn fee levels.
    Compare(Common),
    /// Print the default config.
    Defaults,
}

#[derive(Args)]
struct Common {
    /// TOML config; unset keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Map times; repeat or comma-separate.
    #[arg(long = "t", value_delimiter = ',')]
    t: Vec<f64>,
    /// Map inventories; repeat or comma-separate.
    #[arg(long = "q", value_delimiter = ',', allow_hyphen_values = true)]
    q: Vec<f64>,
    /// Fee levels in the ladder.
    #[arg(long)]
    n_levels: Option<usize>,
}

impl Common {
    fn context(&self) -> pfqvi::Result<Context> {
        let ov = Overrides {
            output: self.out.clone(),
            seed: self.seed,
            threads: self.threads,
            levels: self.n_levels,
            times: (!self.t.is_empty()).then(|| self.t.clone()),
            inventories: (!self.q.is_empty()).then(|| self.q.clone()),
        };
        Context::new(RunConfig::resolve(self.config.as_deref(), &ov)?)
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn run(cli: Cli) -> pfqvi::Result<()> {
    match cli.command {
        Command::Defaults => commands::cmd_defaults(std::io::stdout().lock()),
        Command::Solve(c) => {
            let out = commands::cmd_solve(&c.context()?)?;
            print_json(&serde_json::json!({
                "v0": out.report.v0,
                "t_steps": out.report.grid.t_steps,
                "residual_max": out.report.residual_max,
                "scheme_tolerance": out.report.scheme_tolerance,
                "obstacle_fraction": out.report.obstacle_fraction,
            }));
            Ok(())
        }
        Command::Simulate(c) => {
            let r = commands::cmd_simulate(&c.context()?)?;
            print_json(&serde_json::json!({
                "mean": r.mean, "std_error": r.std_error, "pde_v0": r.pde_v0, "consistent": r.consistent,
            }));
            Ok(())
        }
        Command::Regions(c) => commands::cmd_regions(&c.context()?).map(|r| print_json(&r)),
        Command::Fees(c) => commands::cmd_fees(&c.context()?).map(|r| print_json(&r)),
        Command::Sweep(c) => commands::cmd_sweep(&c.context()?).map(|r| print_json(&r)),
        Command::Compare(c) => {
            commands::cmd_compare(&c.context()?).map(|r| print_json(&r.comparison.mc))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport::from(&e);
            eprintln!(
                "{}",
                serde_json::to_string(&report).unwrap_or_else(|_| e.to_string())
            );
            ExitCode::from(report.exit_code as u8)
        }
    }
}
