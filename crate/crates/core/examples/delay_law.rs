//! Submits one order per path at t = 0 on each fee level and tests the
//! executed delays against the exponential law of that level.

use pfqvi::cexdex::{CexDexProblem, MarketParams};
use pfqvi::control::{ConfigSpace, PendingLimits, PriorityLadder};
use pfqvi::sim::{ks_exponential, simulate_many, ConstantPolicy, SimConfig};
use pfqvi::solver::Impulse;

fn main() -> pfqvi::Result<()> {
    let market = MarketParams {
        horizon: 20.0,
        ..MarketParams::default()
    };
    let limits = PendingLimits {
        max_pending: 1,
        volume_bound: 1.0,
        pending_cap: 1.0,
    };
    let problem = CexDexProblem::new(market, PriorityLadder::calibrated(3)?, limits)?;
    let space = ConfigSpace::new(&problem.ladder, limits, &[-1.0, 1.0])?;
    let sim = SimConfig {
        dt: Some(0.01),
        ..SimConfig::default()
    };
    let plan = sim.plan(&problem, None)?;
    for level in 0..problem.ladder.levels() {
        let policy = ConstantPolicy {
            nu: 0.0,
            order: Some(Impulse { level, size: 1.0 }),
            until: 0.0,
        };
        let records = simulate_many(&policy, &problem, &space, &plan, sim.paths)?;
        let delays: Vec<f64> = records
            .iter()
            .filter_map(|r| r.orders.first().and_then(|o| o.delay()))
            .collect();
        let rate = problem.ladder.rate(level);
        let ks = ks_exponential(&delays, rate).expect("orders executed");
        let mean = delays.iter().sum::<f64>() / delays.len() as f64;
        println!(
            "level {level}: rate {rate}, {} fills, mean delay {mean:.4} (1/rate {:.4}), KS D = {:.4}, p = {:.3}",
            ks.n,
            1.0 / rate,
            ks.statistic,
            ks.p_value
        );
    }
    Ok(())
}
