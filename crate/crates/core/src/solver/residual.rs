use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cexdex::CexDexProblem;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

use super::kernel::{Precomp, RateChoice};
use super::ValueField;

/// Summary of pointwise QVI residuals over interior nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

impl ResidualStats {
    fn from_values(mut r: Vec<f64>) -> Self {
        if r.is_empty() {
            return Self::default();
        }
        let count = r.len();
        // Chunked sum in fixed order keeps the mean independent of threading.
        let mean = r.chunks(4096).map(|c| c.iter().sum::<f64>()).sum::<f64>() / count as f64;
        r.sort_unstable_by(f64::total_cmp);
        let q = |p: f64| r[((count - 1) as f64 * p).round() as usize];
        Self {
            count,
            max: r[count - 1],
            mean,
            p50: q(0.5),
            p90: q(0.9),
            p99: q(0.99),
        }
    }
}

/// Tolerance `5 (Δt + (Δs/s̄)² + (Δz/z̄)²) (1 + scale)` for residual checks,
/// with spacings relative to the axis midpoints.
pub fn scheme_tolerance(grid: &GridSpec, scale: f64) -> f64 {
    let sm = 0.5 * (grid.s.min + grid.s.max);
    let zm = 0.5 * (grid.z.min + grid.z.max);
    let hs = grid.s.step() / sm;
    let hz = grid.z.step() / zm;
    5.0 * (grid.dt() + hs * hs + hz * hz) * (1.0 + scale.abs())
}

/// `next` sits at time index `n_next`, `cur` one step earlier.
pub(crate) fn residual_with(
    pre: &Precomp,
    grid: &GridSpec,
    cur: &[f64],
    next: &[f64],
    n_next: usize,
    dt: f64,
) -> ResidualStats {
    let shape = pre.shape;
    let per = shape.per_config();
    let rows: Vec<(usize, usize)> = (0..shape.nc)
        .flat_map(|c| (1..shape.ns.saturating_sub(1)).map(move |i| (c, i)))
        .collect();
    let values: Vec<f64> = rows
        .par_iter()
        .flat_map_iter(|&(c, i)| {
            let cs = &next[c * per..(c + 1) * per];
            let submit = grid.space.can_submit(c);
            let moves = grid.space.submits(c);
            (1..shape.nz.saturating_sub(1)).flat_map(move |j| {
                (1..shape.nq.saturating_sub(1)).map(move |k| {
                    let local = pre.local(i, j, k);
                    let v = cur[c * per + local];
                    let h = pre.continuous(cs, i, j, k, RateChoice::Optimize).value
                        + pre.execution(next, n_next, c, i, j, k);
                    let pde = (v - cs[local]) / dt - h;
                    if submit && !moves.is_empty() {
                        let m = moves
                            .iter()
                            .map(|mv| cur[mv.target * per + local])
                            .fold(f64::NEG_INFINITY, f64::max);
                        pde.min(v - m).abs()
                    } else {
                        pde.abs()
                    }
                })
            })
        })
        .collect();
    ResidualStats::from_values(values)
}

/// Residual `|min(−v_t − sup H, v − Mv)|` (or `|−v_t − sup H|` at full
/// capacity) on interior nodes, for every retained time index whose
/// successor is also retained. The backward difference in time is paired
/// with the Hamiltonian on the later slice, as in the explicit scheme.
pub fn qvi_residual(
    value: &ValueField,
    grid: &GridSpec,
    problem: &CexDexProblem,
) -> Result<Vec<(usize, ResidualStats)>> {
    let pre = Precomp::new(problem, grid)?;
    let dt = grid.dt();
    let mut out = Vec::new();
    for n in value.retained() {
        if n >= grid.t_steps || !value.has(n + 1) {
            continue;
        }
        out.push((
            n,
            residual_with(&pre, grid, value.slice(n)?, value.slice(n + 1)?, n + 1, dt),
        ));
    }
    if out.is_empty() {
        return Err(Error::SliceNotRetained(0));
    }
    Ok(out)
}

/// Residual statistics between two explicit slices `v(t_n)` and `v(t_{n+1})`.
pub fn residual_between(
    problem: &CexDexProblem,
    grid: &GridSpec,
    n: usize,
    cur: &[f64],
    next: &[f64],
) -> Result<ResidualStats> {
    if n >= grid.t_steps {
        return Err(Error::OffGrid(format!("time index {n} has no successor")));
    }
    let pre = Precomp::new(problem, grid)?;
    Ok(residual_with(&pre, grid, cur, next, n + 1, grid.dt()))
}

/// Share of nodes satisfying `v >= Mv - tol` over configs that can submit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleStats {
    pub nodes: usize,
    pub violations: usize,
    /// Largest `Mv - v` seen.
    pub max_excess: f64,
    pub tolerance: f64,
}

impl ObstacleStats {
    pub fn fraction_ok(&self) -> f64 {
        if self.nodes == 0 {
            1.0
        } else {
            1.0 - self.violations as f64 / self.nodes as f64
        }
    }
}

/// Checks `v >= Mv - 1e-8 * scale` on every retained slice, where `scale`
/// is the largest `|v|` of that slice.
pub fn obstacle_check(value: &ValueField, grid: &GridSpec) -> Result<ObstacleStats> {
    let shape = value.shape;
    let per = shape.per_config();
    let mut out = ObstacleStats::default();
    for n in value.retained() {
        let v = value.slice(n)?;
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = 1e-8 * scale.max(1.0);
        out.tolerance = out.tolerance.max(tol);
        for c in (0..shape.nc).filter(|&c| grid.space.can_submit(c)) {
            let moves = grid.space.submits(c);
            if moves.is_empty() {
                continue;
            }
            for local in 0..per {
                let here = v[c * per + local];
                let m = moves
                    .iter()
                    .map(|mv| v[mv.target * per + local])
                    .fold(f64::NEG_INFINITY, f64::max);
                out.nodes += 1;
                out.max_excess = out.max_excess.max(m - here);
                if here < m - tol {
                    out.violations += 1;
                }
            }
        }
    }
    Ok(out)
}
