//! Simulates the solved policy and sets the mean objective against the
//! value function at the initial state.
//!
//! `cargo run --release --example monte_carlo_dpp [config.toml]`

use pfqvi::config::RunConfig;
use pfqvi::sim::{evaluate_policy, TablePolicy};
use pfqvi::solver::solve;

fn main() -> pfqvi::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/small.toml").into());
    let cfg = RunConfig::load(path.as_ref())?;
    let problem = cfg.problem()?;
    let grid = cfg.grid_spec(&problem)?;
    let sol = solve(&problem, &grid, &cfg.solve_options())?;
    let m = &problem.market;
    let v0 = sol.value.get(
        0,
        grid.s.nearest(m.s0),
        grid.z.nearest(m.z0),
        grid.q.nearest(cfg.sim.q0),
        grid.space.empty_index(),
    )?;

    let policy = TablePolicy::new(&grid, &sol.policy)?;
    let ev = evaluate_policy(&policy, &problem, &grid.space, &cfg.sim, Some(grid.dt()))?;
    let se = ev.std_error.unwrap_or(0.0);
    let tol = (0.02 * v0.abs()).max(3.0 * se);
    println!("value function   v0 = {v0:.3}");
    println!(
        "Monte Carlo mean J  = {:.3} +- {se:.3} ({} paths, {} steps)",
        ev.mean, ev.paths, ev.steps
    );
    println!(
        "|difference| = {:.3}, allowed {tol:.3}",
        (ev.mean - v0).abs()
    );
    println!("policy lookups clamped to the grid: {}", ev.escapes);
    Ok(())
}
