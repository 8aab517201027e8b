use crate::cexdex::MarketParams;

const MAX_SUBSTEP: f64 = 1e-3;

fn rhs(theta: f64, p: &MarketParams) -> f64 {
    p.running_penalty - theta * theta / p.temp_impact
}

/// Inventory coefficient of the no-impulse value `q s + θ(t) q²`.
///
/// Integrates `θ' = φ − θ²/k` backward from `θ(T) = −Ξ` with classical RK4
/// with at least ten substeps per interval of `times`, which must lie in `[0, T]`.
/// Returns `θ` at each entry of `times`, in input order.
pub fn riccati_reference(params: &MarketParams, times: &[f64]) -> Vec<f64> {
    let horizon = params.horizon;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut out = vec![0.0; times.len()];
    let mut t = horizon;
    let mut theta = -params.terminal_penalty;
    for idx in order {
        let target = times[idx].clamp(0.0, horizon);
        let gap = t - target;
        if gap > 0.0 {
            let n = ((gap / MAX_SUBSTEP).ceil() as usize).max(10);
            let h = -gap / n as f64;
            for _ in 0..n {
                let k1 = rhs(theta, params);
                let k2 = rhs(theta + 0.5 * h * k1, params);
                let k3 = rhs(theta + 0.5 * h * k2, params);
                let k4 = rhs(theta + h * k3, params);
                theta += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            t = target;
        }
        out[idx] = theta;
    }
    out
}

/// No-impulse value `q s + θ q²`.
pub fn riccati_value(theta: f64, s: f64, q: f64) -> f64 {
    q * s + theta * q * q
}
