//! Monte Carlo simulation of the controlled CEX-DEX system.
//!
//! Prices follow Euler-Maruyama steps; pending orders execute on per-level
//! exponential clocks. Each step draws one uniform per level whether or not
//! an order is pending, and a hit at `u <= 1 - exp(-rate h)` places the fill
//! at offset `-ln(1 - u) / rate` inside the step. Combined with the geometric
//! count of missed steps this makes every delay exactly exponential.
//!
//! Paths use three ChaCha streams (Brownian, clocks, fee draws) keyed by the
//! path id, so policies compared under one seed share their noise.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{OpenClosed01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cexdex::{psi, swap_cashflow, terminal_reward, CexDexProblem};
use crate::control::ConfigSpace;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::solver::{solve_with_random_fee_evaluation, Impulse, PolicyTables};

/// Largest `rate * dt` allowed in a simulation step.
pub const MAX_RATE_STEP: f64 = 0.05;

/// Which policy a run simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySource {
    Optimal,
    RandomFee,
    NoImpulse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub paths: usize,
    /// Simulation step; defaults to the PDE step, refined until
    /// `rate * dt <= 0.05` for every level.
    pub dt: Option<f64>,
    pub seed: u64,
    pub policy: PolicySource,
    pub q0: f64,
    /// Keep every this many steps of the state path (0 keeps none).
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            paths: 10_000,
            dt: None,
            seed: 7,
            policy: PolicySource::Optimal,
            q0: 0.0,
            record_every: 0,
        }
    }
}

/// Resolved step count and size for one simulation setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimPlan {
    pub steps: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub q0: f64,
    pub record_every: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidSim("paths must be at least 1".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidSim(format!("dt = {dt} must be positive")));
            }
        }
        if !self.q0.is_finite() {
            return Err(Error::InvalidSim("q0 must be finite".into()));
        }
        Ok(())
    }

    /// Step plan for `problem`, given the PDE step the policy was solved on.
    pub fn plan(&self, problem: &CexDexProblem, pde_dt: Option<f64>) -> Result<SimPlan> {
        self.validate()?;
        let horizon = problem.market.horizon;
        let mut h = match (self.dt, pde_dt) {
            (Some(d), Some(p)) if d > p * (1.0 + 1e-12) => {
                return Err(Error::InvalidSim(format!(
                    "dt = {d} exceeds the PDE step {p}"
                )));
            }
            (Some(d), _) => d,
            (None, Some(p)) if p > 0.0 => p,
            _ => horizon / 1000.0,
        };
        let max_rate = problem.ladder.rates().iter().copied().fold(0.0, f64::max);
        if max_rate * h > MAX_RATE_STEP {
            h = MAX_RATE_STEP / max_rate;
        }
        let steps = (horizon / h - 1e-9).ceil().max(1.0) as usize;
        Ok(SimPlan {
            steps,
            dt: horizon / steps as f64,
            horizon,
            seed: self.seed,
            q0: self.q0,
            record_every: self.record_every,
        })
    }
}

/// What a policy sees at a step boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub s: f64,
    pub z: f64,
    pub q: f64,
    /// Index of the pending config in the config space.
    pub config: usize,
    pub can_submit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub nu: f64,
    pub submit: Option<Impulse>,
    /// The state was outside the policy grid and was clamped for lookup.
    pub escaped: bool,
}

/// A feedback policy. `rng` is the path's fee-draw stream.
pub trait Policy: Sync {
    fn decide(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Decision;
}

/// Policy read from solved tables: nearest-node exercise decisions and a
/// multilinear CEX rate.
pub struct TablePolicy<'a> {
    pub grid: &'a GridSpec,
    pub tables: &'a PolicyTables,
}

impl<'a> TablePolicy<'a> {
    pub fn new(grid: &'a GridSpec, tables: &'a PolicyTables) -> Result<Self> {
        if !tables.has_nu() {
            return Err(Error::InvalidSim(
                "policy tables carry no CEX rate slices".into(),
            ));
        }
        if tables.shape.nc != grid.space.len() || tables.t_steps != grid.t_steps {
            return Err(Error::InvalidSim(
                "policy tables do not match the grid".into(),
            ));
        }
        Ok(Self { grid, tables })
    }
}

impl Policy for TablePolicy<'_> {
    fn decide(&self, obs: &Observation, _rng: &mut ChaCha8Rng) -> Decision {
        let g = self.grid;
        let escaped = !(g.s.contains(obs.s) && g.z.contains(obs.z) && g.q.contains(obs.q));
        let tn = if g.t_steps == 0 {
            0.0
        } else {
            (obs.t / g.dt()).min(g.t_steps as f64)
        };
        let n = g.nearest_time_index(obs.t);
        let (i, j, k) = (g.s.nearest(obs.s), g.z.nearest(obs.z), g.q.nearest(obs.q));
        let submit = if obs.can_submit {
            self.tables.impulse(n, i, j, k, obs.config)
        } else {
            None
        };
        let nu = self
            .tables
            .nu_interp(
                tn,
                obs.config,
                g.s.bracket(obs.s),
                g.z.bracket(obs.z),
                g.q.bracket(obs.q),
            )
            .unwrap_or(0.0);
        Decision {
            nu,
            submit,
            escaped,
        }
    }
}

/// Wraps a policy and drops its submissions.
pub struct NoImpulse<P>(pub P);

impl<P: Policy> Policy for NoImpulse<P> {
    fn decide(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Decision {
        Decision {
            submit: None,
            ..self.0.decide(obs, rng)
        }
    }
}

/// Keeps the wrapped policy's submission times and sizes but draws the fee
/// level uniformly among the levels admissible for that size.
pub struct RandomFee<'a, P> {
    pub inner: P,
    pub space: &'a ConfigSpace,
}

/// Random-fee baseline around `policy`.
pub fn random_fee_baseline<P: Policy>(policy: P, space: &ConfigSpace) -> RandomFee<'_, P> {
    RandomFee {
        inner: policy,
        space,
    }
}

impl<P: Policy> Policy for RandomFee<'_, P> {
    fn decide(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Decision {
        let d = self.inner.decide(obs, rng);
        let Some(imp) = d.submit else { return d };
        let options: Vec<usize> = self
            .space
            .submits(obs.config)
            .iter()
            .filter(|m| same_size(m.size, imp.size))
            .map(|m| m.level)
            .collect();
        if options.is_empty() {
            return d;
        }
        let level = options[rng.gen_range(0..options.len())];
        Decision {
            submit: Some(Impulse { level, ..imp }),
            ..d
        }
    }
}

/// Constant CEX rate; optionally submits `order` whenever it can, up to
/// time `until`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy {
    pub nu: f64,
    pub order: Option<Impulse>,
    pub until: f64,
}

impl Policy for ConstantPolicy {
    fn decide(&self, obs: &Observation, _rng: &mut ChaCha8Rng) -> Decision {
        Decision {
            nu: self.nu,
            submit: self.order.filter(|_| obs.can_submit && obs.t <= self.until),
            escaped: false,
        }
    }
}

fn same_size(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

/// One state sample along a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: f64,
    pub s: f64,
    pub z: f64,
    pub q: f64,
    pub cash: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderRecord {
    pub submit_time: f64,
    pub level: usize,
    pub size: f64,
    /// `None` if still pending at the horizon.
    pub execute_time: Option<f64>,
}

impl OrderRecord {
    pub fn delay(&self) -> Option<f64> {
        self.execute_time.map(|e| e - self.submit_time)
    }
}

/// One simulated path and its objective decomposition:
/// `objective = cex_cash + dex_cash - inventory_penalty + terminal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub path_id: u64,
    pub path: Vec<PathPoint>,
    pub orders: Vec<OrderRecord>,
    pub cex_cash: f64,
    pub dex_cash: f64,
    pub inventory_penalty: f64,
    pub terminal: f64,
    pub objective: f64,
    pub final_state: PathPoint,
    /// Steps at which the policy lookup was clamped to its grid.
    pub escapes: usize,
    /// Largest pending count and pending |volume| seen.
    pub max_pending: usize,
    pub max_pending_volume: f64,
}

const BROWNIAN: u64 = 0;
const CLOCKS: u64 = 1;
const FEES: u64 = 2;

fn stream(seed: u64, path: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path.wrapping_mul(3).wrapping_add(purpose));
    rng
}

/// Simulates path `path_id` from `(s0, z0, q0)` with no pending orders.
pub fn simulate_path(
    policy: &dyn Policy,
    problem: &CexDexProblem,
    space: &ConfigSpace,
    plan: &SimPlan,
    path_id: u64,
) -> Result<SimRecord> {
    let m = &problem.market;
    let ladder = &problem.ladder;
    let levels = ladder.levels();
    let h = plan.dt;
    let sqrt_h = h.sqrt();
    let mut brown = stream(plan.seed, path_id, BROWNIAN);
    let mut clocks = stream(plan.seed, path_id, CLOCKS);
    let mut fees = stream(plan.seed, path_id, FEES);

    let (mut s, mut z, mut q) = (m.s0, m.z0, plan.q0);
    let mut cash = 0.0;
    let mut cex_cash = 0.0;
    let mut dex_cash = 0.0;
    let mut penalty = 0.0;
    let mut config = space.empty_index();
    let mut orders: Vec<OrderRecord> = Vec::new();
    let mut pending: Vec<Vec<usize>> = vec![Vec::new(); levels];
    let mut path = Vec::new();
    let mut escapes = 0;
    let mut max_pending = 0;
    let mut max_pending_volume: f64 = 0.0;
    let mut hits: Vec<(f64, usize)> = Vec::with_capacity(levels);

    for step in 0..plan.steps {
        let t = step as f64 * h;
        if plan.record_every > 0 && step % plan.record_every == 0 {
            path.push(PathPoint { t, s, z, q, cash });
        }
        let obs = Observation {
            t,
            s,
            z,
            q,
            config,
            can_submit: space.can_submit(config),
        };
        let d = policy.decide(&obs, &mut fees);
        if d.escaped {
            escapes += 1;
        }
        if let Some(imp) = d.submit {
            let mv = space
                .submits(config)
                .iter()
                .find(|mv| mv.level == imp.level && same_size(mv.size, imp.size));
            if let Some(mv) = mv {
                config = mv.target;
                pending[mv.level].push(orders.len());
                orders.push(OrderRecord {
                    submit_time: t,
                    level: mv.level,
                    size: mv.size,
                    execute_time: None,
                });
                let cfg = space.config(config);
                max_pending = max_pending.max(cfg.total_count());
                max_pending_volume = max_pending_volume.max(cfg.total_abs_volume());
            }
        }

        let nu = d.nu;
        let cex = -nu * (s + m.temp_impact * nu) * h;
        cex_cash += cex;
        cash += cex;
        penalty += m.running_penalty * q * q * h;

        let dws: f64 = brown.sample(StandardNormal);
        let dwz: f64 = brown.sample(StandardNormal);
        let s_next = s + m.sigma_s * sqrt_h * dws;
        let mut z_next = z + m.kappa * (s - z) * h + m.sigma_z * sqrt_h * dwz;
        let mut q_next = q + nu * h;

        hits.clear();
        for (level, queue) in pending.iter().enumerate().take(levels) {
            let u: f64 = clocks.sample(OpenClosed01);
            if queue.is_empty() {
                continue;
            }
            let rate = ladder.rate(level);
            if u <= -(-rate * h).exp_m1() {
                hits.push((-(-u).ln_1p() / rate, level));
            }
        }
        hits.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(offset, level) in &hits {
            let ex = space
                .executes(config)
                .iter()
                .find(|e| e.level == level)
                .copied()
                .ok_or(Error::NoPendingAtLevel(level))?;
            let flow = swap_cashflow(ex.volume, z_next, m.depth)? - ladder.fee(level);
            dex_cash += flow;
            cash += flow;
            z_next += psi(z_next, m.depth)? * ex.volume;
            if z_next <= 0.0 {
                return Err(Error::NonPositivePrice(z_next));
            }
            q_next += ex.volume;
            config = ex.target;
            for idx in pending[level].drain(..) {
                orders[idx].execute_time = Some(t + offset);
            }
        }
        s = s_next;
        z = z_next;
        q = q_next;
    }

    let terminal = terminal_reward(s, q, m);
    let final_state = PathPoint {
        t: plan.horizon,
        s,
        z,
        q,
        cash,
    };
    if plan.record_every > 0 {
        path.push(final_state);
    }
    Ok(SimRecord {
        path_id,
        path,
        orders,
        cex_cash,
        dex_cash,
        inventory_penalty: penalty,
        terminal,
        objective: cex_cash + dex_cash - penalty + terminal,
        final_state,
        escapes,
        max_pending,
        max_pending_volume,
    })
}

/// Sum in a fixed pairwise order.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean and standard error; the error is `None` for one sample.
pub fn mean_se(x: &[f64]) -> (f64, Option<f64>) {
    let n = x.len() as f64;
    let mean = pairwise_sum(x) / n;
    if x.len() < 2 {
        return (mean, None);
    }
    let dev: Vec<f64> = x.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub paths: usize,
    pub mean: f64,
    /// `None` for a single path.
    pub std_error: Option<f64>,
    pub escapes: usize,
    pub steps: usize,
    pub dt: f64,
    pub objectives: Vec<f64>,
}

/// Runs paths `0..plan.paths` in parallel and returns them in path order.
pub fn simulate_many(
    policy: &dyn Policy,
    problem: &CexDexProblem,
    space: &ConfigSpace,
    plan: &SimPlan,
    paths: usize,
) -> Result<Vec<SimRecord>> {
    (0..paths as u64)
        .into_par_iter()
        .map(|p| simulate_path(policy, problem, space, plan, p))
        .collect()
}

/// Mean objective and standard error over `cfg.paths` paths.
pub fn evaluate_policy(
    policy: &dyn Policy,
    problem: &CexDexProblem,
    space: &ConfigSpace,
    cfg: &SimConfig,
    pde_dt: Option<f64>,
) -> Result<Evaluation> {
    let plan = SimConfig {
        record_every: 0,
        ..cfg.clone()
    }
    .plan(problem, pde_dt)?;
    let results: Vec<(f64, usize)> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|p| simulate_path(policy, problem, space, &plan, p).map(|r| (r.objective, r.escapes)))
        .collect::<Result<_>>()?;
    let objectives: Vec<f64> = results.iter().map(|r| r.0).collect();
    let (mean, std_error) = mean_se(&objectives);
    if std_error.is_none() {
        log::warn!("standard error undefined for a single path");
    }
    Ok(Evaluation {
        paths: cfg.paths,
        mean,
        std_error,
        escapes: results.iter().map(|r| r.1).sum(),
        steps: plan.steps,
        dt: plan.dt,
        objectives,
    })
}

/// Writes one JSON object per record and line.
pub fn write_records_jsonl<W: Write>(records: &[SimRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Artifact(format!("json: {e}")))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Executed delays per level.
pub fn delays_by_level(records: &[SimRecord], levels: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); levels];
    for r in records {
        for o in &r.orders {
            if let Some(d) = o.delay() {
                out[o.level].push(d);
            }
        }
    }
    out
}

/// Executed `(delay, horizon - submit_time)` pairs per level.
pub fn delay_windows_by_level(
    records: &[SimRecord],
    levels: usize,
    horizon: f64,
) -> Vec<Vec<(f64, f64)>> {
    let mut out = vec![Vec::new(); levels];
    for r in records {
        for o in &r.orders {
            if let Some(d) = o.delay() {
                out[o.level].push((d, horizon - o.submit_time));
            }
        }
    }
    out
}

/// One-sample Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov tail `P(K > x)` with the small-sample correction
/// `x = (sqrt(n) + 0.12 + 0.11 / sqrt(n)) D`.
fn kolmogorov_tail(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_uniform(mut u: Vec<f64>) -> Option<KsTest> {
    if u.is_empty() {
        return None;
    }
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &f) in u.iter().enumerate() {
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    Some(KsTest {
        n: u.len(),
        statistic: d,
        p_value: kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d),
    })
}

/// KS test of `samples` against Exponential(`rate`).
pub fn ks_exponential(samples: &[f64], rate: f64) -> Option<KsTest> {
    if !(rate > 0.0) {
        return None;
    }
    ks_uniform(
        samples
            .iter()
            .map(|&v| -(-rate * v.max(0.0)).exp_m1())
            .collect(),
    )
}

/// KS test of delays observed only when shorter than their window:
/// `(delay, window)` pairs are mapped through `F(d) / F(w)`, which is
/// uniform if delays are Exponential(`rate`) before censoring.
pub fn ks_censored_exponential(samples: &[(f64, f64)], rate: f64) -> Option<KsTest> {
    if !(rate > 0.0) {
        return None;
    }
    let cdf = |x: f64| -(-rate * x.max(0.0)).exp_m1();
    ks_uniform(
        samples
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|&(d, w)| (cdf(d) / cdf(w)).min(1.0))
            .collect(),
    )
}

/// Quantiles at 5, 25, 50, 75 and 95 percent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p05: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        Self {
            p05: q(0.05),
            p25: q(0.25),
            p50: q(0.5),
            p75: q(0.75),
            p95: q(0.95),
        }
    }
}

/// PDE side of the comparison: norms of `v(0, ., empty)` under the optimal
/// and the random-fee policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeComparison {
    pub optimal_norm: f64,
    pub random_norm: f64,
    /// `optimal_norm / random_norm`.
    pub norm_ratio: f64,
    /// Pointwise `v_opt - v_rand` over the empty-config grid at t = 0.
    pub improvement: Quantiles,
}

/// Monte Carlo side: paired objectives under common noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McComparison {
    pub paths: usize,
    pub optimal_mean: f64,
    pub optimal_se: Option<f64>,
    pub random_mean: f64,
    pub random_se: Option<f64>,
    /// Mean of `J_opt - J_rand` per path, its standard error and 95% interval.
    pub diff_mean: f64,
    pub diff_se: Option<f64>,
    pub diff_ci95: (f64, f64),
    /// One-sided p-value for `E[J_opt - J_rand] <= 0`.
    pub p_value: f64,
    /// `optimal_mean / random_mean` with a delta-method 95% interval.
    pub ratio: f64,
    pub ratio_ci95: (f64, f64),
    /// The paired difference is positive at 95% one-sided confidence.
    pub optimal_better: bool,
    pub escapes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub levels: usize,
    pub pde: Option<PdeComparison>,
    pub mc: McComparison,
}

/// Paired comparison of two objective samples drawn under the same seeds.
pub fn paired_comparison(optimal: &Evaluation, random: &Evaluation) -> Result<McComparison> {
    if optimal.objectives.len() != random.objectives.len() {
        return Err(Error::InvalidSim("paired samples differ in length".into()));
    }
    let diffs: Vec<f64> = optimal
        .objectives
        .iter()
        .zip(&random.objectives)
        .map(|(a, b)| a - b)
        .collect();
    let (diff_mean, diff_se) = mean_se(&diffs);
    let normal = Normal::standard();
    let z95 = normal.inverse_cdf(0.975);
    let (p_value, diff_ci95) = match diff_se {
        Some(se) if se > 0.0 => (
            1.0 - normal.cdf(diff_mean / se),
            (diff_mean - z95 * se, diff_mean + z95 * se),
        ),
        _ => (
            if diff_mean > 0.0 { 0.0 } else { 1.0 },
            (diff_mean, diff_mean),
        ),
    };
    let ratio = optimal.mean / random.mean;
    // delta method on (mean_a, mean_b) with the paired covariance
    let ratio_ci95 = match (optimal.std_error, random.std_error) {
        (Some(sa), Some(sb)) => {
            let n = diffs.len() as f64;
            let devs: Vec<f64> = optimal
                .objectives
                .iter()
                .zip(&random.objectives)
                .map(|(a, b)| (a - optimal.mean) * (b - random.mean))
                .collect();
            let cov = pairwise_sum(&devs) / (n - 1.0) / n;
            let (ma, mb) = (optimal.mean, random.mean);
            let var = (sa * sa) / (mb * mb) + (ma * ma) * (sb * sb) / mb.powi(4)
                - 2.0 * ma * cov / mb.powi(3);
            let se = var.max(0.0).sqrt();
            (ratio - z95 * se, ratio + z95 * se)
        }
        _ => (ratio, ratio),
    };
    Ok(McComparison {
        paths: diffs.len(),
        optimal_mean: optimal.mean,
        optimal_se: optimal.std_error,
        random_mean: random.mean,
        random_se: random.std_error,
        diff_mean,
        diff_se,
        diff_ci95,
        p_value,
        ratio,
        ratio_ci95,
        optimal_better: p_value < 0.05,
        escapes: optimal.escapes + random.escapes,
    })
}

/// Compares the solved policy against its random-fee baseline by Monte
/// Carlo and, if `with_pde`, by the lockstep PDE evaluation.
pub fn compare_policies(
    problem: &CexDexProblem,
    grid: &GridSpec,
    tables: &PolicyTables,
    cfg: &SimConfig,
    with_pde: bool,
    threads: Option<usize>,
) -> Result<ComparisonReport> {
    let optimal = TablePolicy::new(grid, tables)?;
    let random = random_fee_baseline(TablePolicy::new(grid, tables)?, &grid.space);
    let a = evaluate_policy(&optimal, problem, &grid.space, cfg, Some(grid.dt()))?;
    let b = evaluate_policy(&random, problem, &grid.space, cfg, Some(grid.dt()))?;
    let mc = paired_comparison(&a, &b)?;
    let pde = if with_pde {
        let ev = solve_with_random_fee_evaluation(problem, grid, threads)?;
        let per = ev.shape.per_config();
        let (o, r) = (&ev.optimal[..per], &ev.random[..per]);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = o.iter().zip(r).map(|(a, b)| a - b).collect();
        Some(PdeComparison {
            optimal_norm: norm(o),
            random_norm: norm(r),
            norm_ratio: norm(o) / norm(r),
            improvement: Quantiles::of(&diff),
        })
    } else {
        None
    };
    Ok(ComparisonReport {
        levels: problem.ladder.levels(),
        pde,
        mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cexdex::MarketParams;
    use crate::control::{PendingLimits, PriorityLadder};

    fn problem(levels: usize) -> CexDexProblem {
        CexDexProblem::new(
            MarketParams::default(),
            PriorityLadder::calibrated(levels).unwrap(),
            PendingLimits {
                max_pending: 1,
                volume_bound: 5.0,
                pending_cap: 5.0,
            },
        )
        .unwrap()
    }

    fn space(p: &CexDexProblem) -> ConfigSpace {
        ConfigSpace::new(&p.ladder, p.limits, &[-5.0, -2.5, 2.5, 5.0]).unwrap()
    }

    #[test]
    fn plan_respects_rate_bound_and_pde_step() {
        let p = problem(3);
        let plan = SimConfig::default().plan(&p, Some(0.05)).unwrap();
        assert!(plan.dt * 3.0 <= MAX_RATE_STEP + 1e-12);
        assert!((plan.dt * plan.steps as f64 - 1.0).abs() < 1e-12);
        let bad = SimConfig {
            dt: Some(0.1),
            ..SimConfig::default()
        };
        assert!(matches!(
            bad.plan(&p, Some(0.01)),
            Err(Error::InvalidSim(_))
        ));
        let zero = SimConfig {
            paths: 0,
            ..SimConfig::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn quiet_market_without_trading_scores_zero() {
        let mut p = problem(1);
        p.market.sigma_s = 1e-300;
        p.market.sigma_z = 1e-300;
        p.market.kappa = 0.0;
        p.market.running_penalty = 0.0;
        p.market.terminal_penalty = 0.0;
        let sp = space(&p);
        let pol = ConstantPolicy {
            nu: 0.0,
            order: None,
            until: 0.0,
        };
        let plan = SimConfig::default().plan(&p, None).unwrap();
        let r = simulate_path(&pol, &p, &sp, &plan, 0).unwrap();
        assert_eq!(r.objective, 0.0);
        assert!(r.orders.is_empty());
    }

    #[test]
    fn deterministic_cex_trading_matches_closed_form() {
        // ν constant, no noise: J = -ν(s + kν)T - φ ∫(νt)² dt + g(s, νT)
        let mut p = problem(1);
        p.market.sigma_s = 0.0;
        p.market.sigma_z = 0.0;
        let sp = space(&p);
        let nu = 2.0;
        let pol = ConstantPolicy {
            nu,
            order: None,
            until: 0.0,
        };
        let plan = SimConfig {
            dt: Some(1e-4),
            ..SimConfig::default()
        }
        .plan(&p, None)
        .unwrap();
        let r = simulate_path(&pol, &p, &sp, &plan, 0).unwrap();
        let s = p.market.s0;
        let k = p.market.temp_impact;
        let exact = -nu * (s + k * nu) - nu * nu / 3.0 + (nu * s - nu * nu);
        assert!(
            (r.objective - exact).abs() < 1e-3,
            "{} vs {exact}",
            r.objective
        );
    }

    #[test]
    fn cash_and_objective_decompose() {
        let p = problem(2);
        let sp = space(&p);
        let pol = ConstantPolicy {
            nu: -1.0,
            order: Some(Impulse {
                level: 1,
                size: -2.5,
            }),
            until: 0.9,
        };
        let plan = SimConfig {
            record_every: 1,
            ..SimConfig::default()
        }
        .plan(&p, None)
        .unwrap();
        for id in 0..20 {
            let r = simulate_path(&pol, &p, &sp, &plan, id).unwrap();
            let cash = r.cex_cash + r.dex_cash;
            assert!((r.final_state.cash - cash).abs() <= 1e-9 * cash.abs().max(1.0));
            assert_eq!(
                r.objective,
                r.cex_cash + r.dex_cash - r.inventory_penalty + r.terminal
            );
            assert!(r.max_pending <= 1 && r.max_pending_volume <= 5.0);
            for o in &r.orders {
                if let Some(d) = o.delay() {
                    assert!(d > 0.0);
                }
            }
            // q changes only by ν dt between samples unless an order fills
            for w in r.path.windows(2) {
                let filled: f64 = r
                    .orders
                    .iter()
                    .filter(|o| o.execute_time.is_some_and(|e| e >= w[0].t && e < w[1].t))
                    .map(|o| o.size)
                    .sum();
                let dq = w[1].q - w[0].q + (w[1].t - w[0].t);
                assert!((dq - filled).abs() < 1e-9, "{dq} vs {filled}");
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let p = problem(3);
        let sp = space(&p);
        let pol = ConstantPolicy {
            nu: 0.5,
            order: Some(Impulse {
                level: 2,
                size: 5.0,
            }),
            until: 1.0,
        };
        let plan = SimConfig {
            record_every: 5,
            ..SimConfig::default()
        }
        .plan(&p, None)
        .unwrap();
        let a = simulate_many(&pol, &p, &sp, &plan, 16).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool
            .install(|| simulate_many(&pol, &p, &sp, &plan, 16))
            .unwrap();
        assert_eq!(a, b);
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_records_jsonl(&a, &mut x).unwrap();
        write_records_jsonl(&b, &mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.iter().filter(|&&c| c == b'\n').count(), 16);
    }

    #[test]
    fn random_fee_levels_are_reproducible_and_single_level_is_identity() {
        let p = problem(3);
        let sp = space(&p);
        let base = ConstantPolicy {
            nu: 0.0,
            order: Some(Impulse {
                level: 0,
                size: 2.5,
            }),
            until: 1.0,
        };
        let rf = random_fee_baseline(base, &sp);
        let plan = SimConfig::default().plan(&p, None).unwrap();
        let a = simulate_path(&rf, &p, &sp, &plan, 3).unwrap();
        let b = simulate_path(&rf, &p, &sp, &plan, 3).unwrap();
        let la: Vec<usize> = a.orders.iter().map(|o| o.level).collect();
        assert_eq!(la, b.orders.iter().map(|o| o.level).collect::<Vec<_>>());
        assert!(la.iter().any(|&l| l != 0));

        let p1 = problem(1);
        let sp1 = space(&p1);
        let rf1 = random_fee_baseline(base, &sp1);
        let plan1 = SimConfig::default().plan(&p1, None).unwrap();
        assert_eq!(
            simulate_path(&rf1, &p1, &sp1, &plan1, 3).unwrap(),
            simulate_path(&base, &p1, &sp1, &plan1, 3).unwrap()
        );
    }

    #[test]
    fn never_exercising_policy_has_no_orders() {
        let p = problem(2);
        let sp = space(&p);
        let inner = ConstantPolicy {
            nu: 1.0,
            order: Some(Impulse {
                level: 0,
                size: 2.5,
            }),
            until: 1.0,
        };
        let plan = SimConfig::default().plan(&p, None).unwrap();
        let r = simulate_path(&NoImpulse(inner), &p, &sp, &plan, 0).unwrap();
        assert!(r.orders.is_empty());
        assert_eq!(r.dex_cash, 0.0);
    }

    #[test]
    fn single_path_has_no_standard_error() {
        assert_eq!(mean_se(&[3.0]), (3.0, None));
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se.unwrap() - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ks_detects_wrong_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000)
            .map(|_| {
                let u: f64 = rng.sample(OpenClosed01);
                -u.ln() / 2.0
            })
            .collect();
        assert!(ks_exponential(&x, 2.0).unwrap().p_value > 0.01);
        assert!(ks_exponential(&x, 2.5).unwrap().p_value < 1e-6);
        // D = 0.5 with n = 1 gives tail close to 1
        // keep only draws shorter than a random window
        let cut: Vec<(f64, f64)> = x
            .iter()
            .map(|&d| (d, rng.gen_range(0.05..1.0)))
            .filter(|(d, w)| d < w)
            .collect();
        let plain: Vec<f64> = cut.iter().map(|c| c.0).collect();
        assert!(ks_exponential(&plain, 2.0).unwrap().p_value < 1e-6);
        assert!(ks_censored_exponential(&cut, 2.0).unwrap().p_value > 0.01);
        assert!(ks_censored_exponential(&cut, 4.0).unwrap().p_value < 1e-6);
        assert!(kolmogorov_tail(0.1) == 1.0);
        assert!((kolmogorov_tail(1.358) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn identical_policies_compare_to_ratio_one() {
        let e = Evaluation {
            paths: 3,
            mean: 2.0,
            std_error: Some(0.5),
            escapes: 0,
            steps: 1,
            dt: 1.0,
            objectives: vec![1.0, 2.0, 3.0],
        };
        let c = paired_comparison(&e, &e).unwrap();
        assert_eq!(c.ratio, 1.0);
        assert_eq!(c.diff_mean, 0.0);
        assert!(!c.optimal_better);
    }

    #[test]
    fn pairwise_sum_is_order_fixed() {
        let x: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        assert!((pairwise_sum(&x) - x.iter().sum::<f64>()).abs() < 1e-12);
    }
}
