//! With no fee levels the problem is pure continuous trading and the value is
//! `q s + theta(t) q^2` with `theta' = phi - theta^2 / k`, `theta(T) = -Xi`.
//! Solves that case on a grid and reports the largest relative gap.
//!
//! `cargo run --release --example riccati_limit [config.toml]`

use pfqvi::config::RunConfig;
use pfqvi::solver::{riccati_reference, riccati_value, solve, SolveOptions};

fn main() -> pfqvi::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/small.toml").into());
    let cfg = RunConfig::load(path.as_ref())?;
    let problem = cfg.problem()?.without_impulses();
    let grid = cfg.grid_spec(&problem)?;
    let sol = solve(&problem, &grid, &SolveOptions::value_only())?;

    let theta0 = riccati_reference(&problem.market, &[0.0])[0];
    println!("theta(0) = {theta0:.6}, {} steps", grid.t_steps);
    let shape = sol.value.shape;
    let mut worst = (0.0, 0.0, 0.0);
    for i in 1..shape.ns - 1 {
        for j in 1..shape.nz - 1 {
            for k in 1..shape.nq - 1 {
                let v = sol.value.get(0, i, j, k, 0)?;
                let exact = riccati_value(theta0, grid.s.value(i), grid.q.value(k));
                let rel = (v - exact).abs() / (1.0 + v.abs());
                if rel > worst.0 {
                    worst = (rel, grid.s.value(i), grid.q.value(k));
                }
            }
        }
    }
    println!(
        "max |v - exact| / (1 + |v|) = {:.3e} at s = {:.1}, q = {}",
        worst.0, worst.1, worst.2
    );
    Ok(())
}
