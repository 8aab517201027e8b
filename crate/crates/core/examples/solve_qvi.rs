//! Solve the desk-scale CEX-DEX problem and print solve diagnostics, the
//! value at the initial state and the share of exercise nodes at q = 0.

use std::time::Instant;

use pfqvi::cexdex::{CexDexProblem, MarketParams};
use pfqvi::control::{PendingLimits, PriorityLadder};
use pfqvi::grid::{GridParams, GridSpec};
use pfqvi::solver::{solve, SolveOptions};

fn main() -> pfqvi::Result<()> {
    let problem = CexDexProblem::new(
        MarketParams::default(),
        PriorityLadder::calibrated(3)?,
        PendingLimits {
            max_pending: 1,
            volume_bound: 10.0,
            pending_cap: 10.0,
        },
    )?;
    let grid = GridSpec::from_params(&problem, &GridParams::default())?;
    println!(
        "grid: {}x{}x{} nodes, {} configs, {} steps (dt = {:.3e})",
        grid.s.count,
        grid.z.count,
        grid.q.count,
        grid.space.len(),
        grid.t_steps,
        grid.dt()
    );

    let start = Instant::now();
    let opts = SolveOptions {
        retain_times: vec![0.5],
        ..SolveOptions::default()
    };
    let sol = solve(&problem, &grid, &opts)?;
    println!("solved in {:.1?}", start.elapsed());
    println!("{:#?}", sol.diagnostics);

    let (i0, j0, k0) = (
        grid.s.nearest(problem.market.s0),
        grid.z.nearest(problem.market.z0),
        grid.q.nearest(0.0),
    );
    println!(
        "v(0, s0, z0, 0, empty) = {:.4}",
        sol.value.get(0, i0, j0, k0, 0)?
    );

    for t in [0.0, 0.5] {
        let n = grid.nearest_time_index(t);
        let mut exercise = 0;
        for i in 0..grid.s.count {
            for j in 0..grid.z.count {
                if !sol.policy.continuation(n, i, j, k0, 0) {
                    exercise += 1;
                }
            }
        }
        println!(
            "t = {t}: {exercise} of {} (s, z) cells exercise at q = 0",
            grid.s.count * grid.z.count
        );
    }
    Ok(())
}
