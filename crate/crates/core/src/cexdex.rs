//! CEX-DEX trading model.
//!
//! The agent trades continuously on a centralized venue at rate `nu` with
//! quadratic temporary cost, and discretely on a constant-product pool with
//! fee-selected execution delay. The pool price `z` mean-reverts toward the
//! CEX price `s` and jumps by a linear impact when the agent's order fills.

use serde::{Deserialize, Serialize};

use crate::control::{ControlProblem, PendingLimits, PriorityLadder};
use crate::error::{Error, Result};

/// Market and preference parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketParams {
    pub s0: f64,
    pub z0: f64,
    pub sigma_s: f64,
    pub sigma_z: f64,
    pub kappa: f64,
    /// Pool depth `d`; reserves are `d / sqrt(z)` asset and `d * sqrt(z)` cash.
    pub depth: f64,
    /// Temporary impact coefficient `k` on CEX trading.
    pub temp_impact: f64,
    /// Running inventory penalty `phi`.
    pub running_penalty: f64,
    /// Terminal inventory penalty `Xi`.
    pub terminal_penalty: f64,
    pub horizon: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        let s0 = 2820.0;
        Self {
            s0,
            z0: s0,
            sigma_s: 0.0569 * s0,
            sigma_z: 0.00569 * s0,
            kappa: 1.0,
            depth: 50_000.0,
            temp_impact: 0.5,
            running_penalty: 1.0,
            terminal_penalty: 1.0,
            horizon: 1.0,
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        fn bad(name: &'static str, reason: &str) -> Error {
            Error::InvalidParam {
                name,
                reason: reason.to_string(),
            }
        }
        let pos = [
            ("s0", self.s0),
            ("z0", self.z0),
            ("sigma_s", self.sigma_s),
            ("sigma_z", self.sigma_z),
            ("depth", self.depth),
            ("temp_impact", self.temp_impact),
            ("horizon", self.horizon),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(name, "must be positive and finite"));
            }
        }
        let nonneg = [
            ("kappa", self.kappa),
            ("running_penalty", self.running_penalty),
            ("terminal_penalty", self.terminal_penalty),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(name, "must be non-negative and finite"));
            }
        }
        Ok(())
    }
}

/// Full trading state: CEX price, pool price, inventory and cash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradingState {
    pub s: f64,
    pub z: f64,
    pub q: f64,
    pub cash: f64,
}

fn check_price(z: f64) -> Result<()> {
    if z > 0.0 && z.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositivePrice(z))
    }
}

/// Impact slope `2 z^{3/2} / d`.
pub fn psi(z: f64, depth: f64) -> Result<f64> {
    check_price(z)?;
    Ok(2.0 * z * z.sqrt() / depth)
}

/// Pool price change caused by executing `xi`.
pub fn impact(xi: f64, z: f64, depth: f64) -> Result<f64> {
    Ok(psi(z, depth)? * xi)
}

/// Largest buy the pool can fill at price `z`.
pub fn drain_limit(z: f64, depth: f64) -> f64 {
    depth / z.sqrt()
}

/// Cash received for acquiring `xi` units from the pool (negative for buys).
///
/// `gamma(xi, z) = d^2 / (xi - d / sqrt(z)) + d sqrt(z)`.
pub fn swap_cashflow(xi: f64, z: f64, depth: f64) -> Result<f64> {
    check_price(z)?;
    let limit = drain_limit(z, depth);
    if xi >= limit {
        return Err(Error::PoolDrain { xi, limit });
    }
    if xi == 0.0 {
        return Ok(0.0);
    }
    Ok(depth * depth / (xi - limit) + depth * z.sqrt())
}

/// Applies a filled pool order to the state; cash is left untouched.
pub fn impulse_map(state: TradingState, xi: f64, depth: f64) -> Result<TradingState> {
    let z = state.z + impact(xi, state.z, depth)?;
    check_price(z)?;
    Ok(TradingState {
        z,
        q: state.q + xi,
        ..state
    })
}

/// Cash added to wealth when an order of `xi` at `level` fills.
pub fn intervention_cashflow(
    xi: f64,
    z: f64,
    level: usize,
    ladder: &PriorityLadder,
    depth: f64,
) -> Result<f64> {
    if level >= ladder.levels() {
        return Err(Error::LevelOutOfRange {
            level,
            levels: ladder.levels(),
        });
    }
    Ok(swap_cashflow(xi, z, depth)? - ladder.fee(level))
}

pub fn running_reward(s: f64, q: f64, nu: f64, params: &MarketParams) -> f64 {
    -nu * (s + params.temp_impact * nu) - params.running_penalty * q * q
}

pub fn terminal_reward(s: f64, q: f64, params: &MarketParams) -> f64 {
    q * s - params.terminal_penalty * q * q
}

/// Drift of `(s, z, q)` and diffusion loadings on `(W^S, W^Z)`.
pub fn drift_diffusion(
    state: &TradingState,
    nu: f64,
    params: &MarketParams,
) -> ([f64; 3], [[f64; 2]; 3]) {
    let drift = [0.0, params.kappa * (state.s - state.z), nu];
    let diffusion = [[params.sigma_s, 0.0], [0.0, params.sigma_z], [0.0, 0.0]];
    (drift, diffusion)
}

/// The CEX-DEX problem: market, ladder and pending-order limits.
#[derive(Debug, Clone, PartialEq)]
pub struct CexDexProblem {
    pub market: MarketParams,
    pub ladder: PriorityLadder,
    pub limits: PendingLimits,
}

impl CexDexProblem {
    pub fn new(
        market: MarketParams,
        ladder: PriorityLadder,
        limits: PendingLimits,
    ) -> Result<Self> {
        market.validate()?;
        ladder.validate()?;
        limits.validate()?;
        Ok(Self {
            market,
            ladder,
            limits,
        })
    }

    /// Same problem with impulses switched off.
    pub fn without_impulses(&self) -> Self {
        Self {
            limits: PendingLimits {
                max_pending: 0,
                ..self.limits
            },
            ..self.clone()
        }
    }
}

fn state_of(x: &[f64]) -> TradingState {
    TradingState {
        s: x[0],
        z: x[1],
        q: x[2],
        cash: 0.0,
    }
}

impl ControlProblem for CexDexProblem {
    fn state_dim(&self) -> usize {
        3
    }

    fn horizon(&self) -> f64 {
        self.market.horizon
    }

    fn ladder(&self) -> &PriorityLadder {
        &self.ladder
    }

    fn limits(&self) -> &PendingLimits {
        &self.limits
    }

    fn drift(&self, _t: f64, x: &[f64], a: f64) -> Vec<f64> {
        drift_diffusion(&state_of(x), a, &self.market).0.to_vec()
    }

    fn diffusion(&self, _t: f64, x: &[f64], a: f64) -> Vec<Vec<f64>> {
        drift_diffusion(&state_of(x), a, &self.market)
            .1
            .iter()
            .map(|r| r.to_vec())
            .collect()
    }

    fn impulse(&self, _t: f64, x: &[f64], xi: f64) -> Result<Vec<f64>> {
        let s = impulse_map(state_of(x), xi, self.market.depth)?;
        Ok(vec![s.s, s.z, s.q])
    }

    fn running_reward(&self, _t: f64, x: &[f64], a: f64) -> f64 {
        running_reward(x[0], x[2], a, &self.market)
    }

    fn terminal_reward(&self, x: &[f64]) -> f64 {
        terminal_reward(x[0], x[2], &self.market)
    }

    fn cashflow(&self, _t: f64, x: &[f64], xi: f64, level: usize) -> Result<f64> {
        intervention_cashflow(xi, x[1], level, &self.ladder, self.market.depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const D: f64 = 50_000.0;

    // Constant-product reserves x = d/sqrt(z), y = d*sqrt(z), x*y = d^2.
    fn cpmm_oracle(xi: f64, z: f64) -> f64 {
        let x = D / z.sqrt();
        let y = D * z.sqrt();
        y - D * D / (x - xi)
    }

    #[test]
    fn psi_examples() {
        // 2 * 2820^1.5 / 50000 at 40 digits
        assert_relative_eq!(
            psi(2820.0, D).unwrap(),
            5.990094222965111,
            max_relative = 1e-13
        );
        assert_eq!(psi(1.0, 2.0).unwrap(), 1.0);
        assert_eq!(psi(0.0, D), Err(Error::NonPositivePrice(0.0)));
    }

    #[test]
    fn impact_examples() {
        assert_eq!(impact(0.0, 2820.0, D).unwrap(), 0.0);
        assert_relative_eq!(
            impact(1.0, 2820.0, D).unwrap(),
            5.990094222965111,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            impact(-2.0, 2820.0, D).unwrap(),
            -11.980188445930223,
            max_relative = 1e-13
        );
    }

    #[test]
    fn swap_examples() {
        assert_eq!(swap_cashflow(0.0, 2820.0, D).unwrap(), 0.0);
        assert_relative_eq!(
            swap_cashflow(1.0, 2820.0, D).unwrap(),
            -2822.998231453488,
            max_relative = 1e-11
        );
        assert_relative_eq!(
            swap_cashflow(-1.0, 2820.0, D).unwrap(),
            2817.0081304736886,
            max_relative = 1e-11
        );
        let limit = drain_limit(2820.0, D);
        assert!(matches!(
            swap_cashflow(limit, 2820.0, D),
            Err(Error::PoolDrain { .. })
        ));
        assert!(matches!(
            swap_cashflow(1.0, -1.0, D),
            Err(Error::NonPositivePrice(_))
        ));
    }

    #[test]
    fn impulse_map_examples() {
        let st = TradingState {
            s: 2820.0,
            z: 2820.0,
            q: 0.0,
            cash: 7.0,
        };
        assert_eq!(impulse_map(st, 0.0, D).unwrap(), st);
        let up = impulse_map(st, 1.0, D).unwrap();
        assert_eq!(up.s, 2820.0);
        assert_eq!(up.q, 1.0);
        assert_eq!(up.cash, 7.0);
        assert_relative_eq!(up.z, 2825.990094222965, max_relative = 1e-13);
        let down = impulse_map(TradingState { q: 5.0, ..st }, -1.0, D).unwrap();
        assert_eq!(down.q, 4.0);
        assert_relative_eq!(down.z, 2814.009905777035, max_relative = 1e-13);
        let tiny = TradingState { z: 1.0, ..st };
        assert!(impulse_map(tiny, -30_000.0, D).is_err());
    }

    #[test]
    fn intervention_cashflow_examples() {
        let ladder = PriorityLadder::new(vec![100.0, 300.0], vec![2.0, 2.5]).unwrap();
        assert_eq!(
            intervention_cashflow(0.0, 2820.0, 0, &ladder, D).unwrap(),
            -100.0
        );
        assert_relative_eq!(
            intervention_cashflow(-1.0, 2820.0, 0, &ladder, D).unwrap(),
            2717.0081304736886,
            max_relative = 1e-11
        );
        assert_relative_eq!(
            intervention_cashflow(1.0, 2820.0, 1, &ladder, D).unwrap(),
            -3122.998231453488,
            max_relative = 1e-11
        );
        assert!(intervention_cashflow(1.0, 2820.0, 2, &ladder, D).is_err());
    }

    #[test]
    fn reward_examples() {
        let p = MarketParams::default();
        assert_eq!(running_reward(2820.0, 0.0, 0.0, &p), 0.0);
        assert_eq!(running_reward(2820.0, 2.0, 0.0, &p), -4.0);
        assert_eq!(running_reward(2820.0, 0.0, 1.0, &p), -2820.5);
        assert_eq!(terminal_reward(2820.0, 0.0, &p), 0.0);
        assert_eq!(terminal_reward(2820.0, 1.0, &p), 2819.0);
        assert_eq!(terminal_reward(2820.0, -1.0, &p), -2821.0);
    }

    #[test]
    fn drift_examples() {
        let p = MarketParams::default();
        let st = TradingState {
            s: 2820.0,
            z: 2820.0,
            q: 0.0,
            cash: 0.0,
        };
        assert_eq!(drift_diffusion(&st, 0.0, &p).0[1], 0.0);
        let st2 = TradingState { s: 2830.0, ..st };
        assert_eq!(drift_diffusion(&st2, 0.0, &p).0[1], 10.0);
        assert_eq!(drift_diffusion(&st, -3.0, &p).0[2], -3.0);
        let sig = drift_diffusion(&st, 0.0, &p).1;
        assert_eq!(sig[2], [0.0, 0.0]);
        assert_eq!(sig[0][1], 0.0);
        assert_eq!(sig[1][0], 0.0);
    }

    #[test]
    fn defaults_match_calibration() {
        let p = MarketParams::default();
        assert_eq!(p.s0, 2820.0);
        assert_eq!(p.z0, 2820.0);
        assert_relative_eq!(p.sigma_s, 160.458, max_relative = 1e-12);
        assert_relative_eq!(p.sigma_z, 16.0458, max_relative = 1e-12);
        p.validate().unwrap();
        let bad = MarketParams { depth: 0.0, ..p };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn terminal_reward_is_concave_in_q() {
        let p = MarketParams::default();
        for i in -20..20 {
            let q = i as f64 * 0.7;
            let h = 0.7;
            let second = terminal_reward(2820.0, q + h, &p) - 2.0 * terminal_reward(2820.0, q, &p)
                + terminal_reward(2820.0, q - h, &p);
            assert_relative_eq!(
                second / (h * h),
                -2.0 * p.terminal_penalty,
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn buy_round_trip_never_profits_on_lattice() {
        for i in 1..=40 {
            for j in 0..=40 {
                let xi = i as f64 * 0.5;
                let z = 500.0 + j as f64 * 100.0;
                let z1 = z + impact(xi, z, D).unwrap();
                let total = swap_cashflow(xi, z, D).unwrap() + swap_cashflow(-xi, z1, D).unwrap();
                assert!(total < 0.0, "xi={xi} z={z} total={total}");
            }
        }
    }

    // The linear impact overshoots the constant-product price drop after a
    // sell, so selling and buying back gains a second-order amount. On the
    // operating range (|xi| <= 10, z within ±3 daily sigma) it stays below
    // the cheapest pair of fees.
    #[test]
    fn sell_round_trip_gain_is_below_two_fees() {
        for i in 1..=20 {
            for j in 0..=40 {
                let xi = -(i as f64) * 0.5;
                let z = 2300.0 + j as f64 * 25.0;
                let z1 = z + impact(xi, z, D).unwrap();
                let total = swap_cashflow(xi, z, D).unwrap() + swap_cashflow(-xi, z1, D).unwrap();
                assert!(total > 0.0);
                assert!(total < 2.0 * 100.0, "xi={xi} z={z} total={total}");
            }
        }
    }

    proptest! {
        #[test]
        fn matches_cpmm_oracle(z in 100.0f64..10_000.0, frac in -0.9f64..0.9) {
            let xi = frac * drain_limit(z, D);
            let g = swap_cashflow(xi, z, D).unwrap();
            prop_assert!((g - cpmm_oracle(xi, z)).abs() <= 1e-9 * g.abs().max(1.0));
        }

        #[test]
        fn swap_strictly_decreasing(z in 100.0f64..10_000.0, a in -50.0f64..50.0, b in -50.0f64..50.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(swap_cashflow(lo, z, D).unwrap() > swap_cashflow(hi, z, D).unwrap());
        }

        #[test]
        fn impact_is_odd(z in 1.0f64..10_000.0, xi in -100.0f64..100.0) {
            prop_assert_eq!(impact(-xi, z, D).unwrap(), -impact(xi, z, D).unwrap());
        }
    }
}
