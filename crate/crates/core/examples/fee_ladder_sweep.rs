//! Value norm at t = 0 as fee levels are added to the ladder one by one.
//!
//! `cargo run --release --example fee_ladder_sweep [config.toml]`

use pfqvi::config::RunConfig;
use pfqvi::policy_tools::value_norm_sweep;

fn main() -> pfqvi::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/small.toml").into());
    let cfg = RunConfig::load(path.as_ref())?;
    let problem = cfg.problem()?;
    let grid = cfg.grid_spec(&problem)?;
    let rows = value_norm_sweep(&problem, &grid, &cfg.sweep.levels, cfg.threads)?;
    println!("{:>6} {:>16} {:>10}", "levels", "||v0||", "increment");
    for r in &rows {
        println!(
            "{:>6} {:>16.3} {:>9.4}%",
            r.levels,
            r.norm,
            100.0 * r.relative_increment
        );
    }
    Ok(())
}
