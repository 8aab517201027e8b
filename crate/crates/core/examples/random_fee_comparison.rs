//! Optimal fee choice against the same policy with fee levels drawn
//! uniformly, under common random numbers.
//!
//! `cargo run --release --example random_fee_comparison [config.toml]`

use pfqvi::config::RunConfig;
use pfqvi::sim::compare_policies;
use pfqvi::solver::solve;

fn main() -> pfqvi::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/small.toml").into());
    let cfg = RunConfig::load(path.as_ref())?;
    let problem = cfg.problem()?;
    let grid = cfg.grid_spec(&problem)?;
    let sol = solve(&problem, &grid, &cfg.solve_options())?;
    let rep = compare_policies(&problem, &grid, &sol.policy, &cfg.sim, true, cfg.threads)?;
    let mc = &rep.mc;
    println!(
        "optimal fees: {:.3} +- {:.3}",
        mc.optimal_mean,
        mc.optimal_se.unwrap_or(0.0)
    );
    println!(
        "random fees:  {:.3} +- {:.3}",
        mc.random_mean,
        mc.random_se.unwrap_or(0.0)
    );
    println!(
        "paired gain {:.3}, 95% CI ({:.3}, {:.3}), one-sided p = {:.2e}",
        mc.diff_mean, mc.diff_ci95.0, mc.diff_ci95.1, mc.p_value
    );
    println!(
        "ratio {:.3}, 95% CI ({:.3}, {:.3})",
        mc.ratio, mc.ratio_ci95.0, mc.ratio_ci95.1
    );
    if let Some(pde) = rep.pde {
        println!("value-function norm ratio {:.5}", pde.norm_ratio);
        println!("pointwise gain quantiles {:?}", pde.improvement);
    }
    Ok(())
}
