//! Backward explicit finite-difference solver for the impulse-control QVI.
//!
//! Each step applies the PDE update to every config from the slice one step
//! later, then projects configs that can still submit onto the obstacle
//! `v >= Mv`, visiting configs from the most to the least pending orders so
//! each projection reads already-final targets.

mod field;
mod kernel;
mod residual;
mod riccati;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cexdex::CexDexProblem;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub use field::{Impulse, PolicyTables, Shape, ValueField};
pub use kernel::{ContinuousTerm, RateChoice};
pub use residual::{
    obstacle_check, qvi_residual, residual_between, scheme_tolerance, ObstacleStats, ResidualStats,
};
pub use riccati::{riccati_reference, riccati_value};

pub(crate) use kernel::Precomp;

/// Relative margin by which `Mv` must beat `v` for a node to count as exercise.
pub const EXERCISE_EPS: f64 = 1e-6;

#[inline]
pub fn exercise_threshold(v: f64) -> f64 {
    EXERCISE_EPS * (1.0 + v.abs())
}

/// Options controlling what the solve keeps and checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Times whose full value slice is kept (t = 0 and t = T always are).
    pub retain_times: Vec<f64>,
    /// Keep ν slices; their stride is chosen to fit `nu_budget_mb`.
    pub keep_nu: bool,
    pub nu_budget_mb: usize,
    /// Run the residual check every this many steps (0 disables).
    pub residual_every: usize,
    /// Allowed multiple of the terminal quadratic growth constant.
    pub growth_factor: f64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            retain_times: Vec::new(),
            keep_nu: true,
            nu_budget_mb: 128,
            residual_every: 0,
            growth_factor: 100.0,
            threads: None,
        }
    }
}

impl SolveOptions {
    /// Keeps only `v(0)` and `v(T)`: no ν, no residual checks.
    pub fn value_only() -> Self {
        Self {
            keep_nu: false,
            ..Self::default()
        }
    }
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub t_steps: usize,
    pub dt: f64,
    pub stability_bound: f64,
    /// Node/execution pairs clamped to the grid in each step.
    pub clamp_events_per_step: u64,
    /// Quadratic growth constant fitted on the terminal slice.
    pub growth_constant: f64,
    /// Largest `|v| / (1 + s² + z² + q²)` seen over the solve.
    pub max_growth_ratio: f64,
    pub nu_stride: Option<usize>,
    /// `(time index, statistics)` for each checked step.
    pub residuals: Vec<(usize, ResidualStats)>,
}

/// Result of a full backward solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub value: ValueField,
    pub policy: PolicyTables,
    pub diagnostics: SolveDiagnostics,
}

/// Argmax of the intervention operator at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterventionChoice {
    pub value: f64,
    pub level: usize,
    pub size: f64,
    pub move_index: usize,
}

/// `Mv` at node `(i, j, k)` of config `c`: best value over admissible
/// submissions, ties broken by move order (lowest level, smallest |size|,
/// sell first).
pub fn intervention_max(
    grid: &GridSpec,
    slice: &[f64],
    c: usize,
    i: usize,
    j: usize,
    k: usize,
) -> Result<InterventionChoice> {
    let moves = grid.space.submits(c);
    let mut best: Option<InterventionChoice> = None;
    for (m, mv) in moves.iter().enumerate() {
        let v = slice[grid.offset(mv.target, i, j, k)];
        if best.is_none_or(|b| v > b.value) {
            best = Some(InterventionChoice {
                value: v,
                level: mv.level,
                size: mv.size,
                move_index: m,
            });
        }
    }
    best.ok_or(Error::NoAdmissibleImpulse)
}

/// Continuous Hamiltonian at one node of config `c`, optimized over ν.
pub fn hamiltonian_continuous(
    problem: &CexDexProblem,
    grid: &GridSpec,
    slice: &[f64],
    c: usize,
    i: usize,
    j: usize,
    k: usize,
) -> Result<ContinuousTerm> {
    let pre = Precomp::new(problem, grid)?;
    let per = grid.nodes_per_config();
    Ok(pre.continuous(
        &slice[c * per..(c + 1) * per],
        i,
        j,
        k,
        RateChoice::Optimize,
    ))
}

/// Execution term at one node of config `c` (zero for the empty config),
/// reading `slice` as the value at time index `n`.
#[allow(clippy::too_many_arguments)]
pub fn execution_term(
    problem: &CexDexProblem,
    grid: &GridSpec,
    slice: &[f64],
    n: usize,
    c: usize,
    i: usize,
    j: usize,
    k: usize,
) -> Result<f64> {
    if n > grid.t_steps {
        return Err(Error::OffGrid(format!(
            "time index {n} beyond {}",
            grid.t_steps
        )));
    }
    let pre = Precomp::new(problem, grid)?;
    Ok(pre.execution(slice, n, c, i, j, k))
}

/// Terminal slice `v(T) = g` broadcast over every config.
pub fn terminal_slice(problem: &CexDexProblem, grid: &GridSpec) -> Vec<f64> {
    let shape = Shape::of(grid);
    let mut out = vec![0.0; shape.len()];
    for c in 0..shape.nc {
        for i in 0..shape.ns {
            let s = grid.s.value(i);
            for j in 0..shape.nz {
                for k in 0..shape.nq {
                    out[shape.offset(c, i, j, k)] =
                        crate::cexdex::terminal_reward(s, grid.q.value(k), &problem.market);
                }
            }
        }
    }
    out
}

/// PDE part of one step: `out = next + dt (H + J)` for every node; also
/// writes the rate used at each node into `nu`.
fn pde_sweep(
    pre: &Precomp,
    next: &[f64],
    n_next: usize,
    out: &mut [f64],
    nu: &mut [f64],
    dt: f64,
    fixed_nu: Option<&[f64]>,
) {
    let Shape { ns, nz, nq, .. } = pre.shape;
    let per = pre.shape.per_config();
    let row = nz * nq;
    out.par_chunks_mut(row)
        .zip(nu.par_chunks_mut(row))
        .enumerate()
        .for_each(|(r, (out_row, nu_row))| {
            let c = r / ns;
            let i = r % ns;
            let cs = &next[c * per..(c + 1) * per];
            for j in 0..nz {
                for k in 0..nq {
                    let l = j * nq + k;
                    let choice = match fixed_nu {
                        None => RateChoice::Optimize,
                        Some(f) => RateChoice::Fixed(f[r * row + l]),
                    };
                    let cont = pre.continuous(cs, i, j, k, choice);
                    let ex = pre.execution(next, n_next, c, i, j, k);
                    out_row[l] = cs[pre.local(i, j, k)] + dt * (cont.value + ex);
                    nu_row[l] = cont.nu;
                }
            }
        });
}

/// Obstacle projection for configs that can submit. `decisions` covers the
/// submittable prefix of configs.
fn project(grid: &GridSpec, shape: &Shape, cur: &mut [f64], decisions: &mut [u16]) {
    let per = shape.per_config();
    let row = shape.nz * shape.nq;
    let max_pending = grid.space.limits().max_pending;
    let counts: Vec<usize> = grid
        .space
        .configs()
        .iter()
        .map(|c| c.total_count())
        .collect();
    for m in (0..max_pending).rev() {
        let start = counts.partition_point(|&x| x < m);
        let end = counts.partition_point(|&x| x <= m);
        if start == end {
            continue;
        }
        let (left, right) = cur.split_at_mut(end * per);
        let right_base = end * per;
        left[start * per..]
            .par_chunks_mut(row)
            .zip(decisions[start * per..end * per].par_chunks_mut(row))
            .enumerate()
            .for_each(|(r, (vrow, drow))| {
                let c = start + r / shape.ns;
                let i = r % shape.ns;
                let moves = grid.space.submits(c);
                for j in 0..shape.nz {
                    for k in 0..shape.nq {
                        let l = j * shape.nq + k;
                        let local = (i * shape.nz + j) * shape.nq + k;
                        let mut best = f64::NEG_INFINITY;
                        let mut arg = 0usize;
                        for (mi, mv) in moves.iter().enumerate() {
                            let v = right[mv.target * per + local - right_base];
                            if v > best {
                                best = v;
                                arg = mi;
                            }
                        }
                        let cont = vrow[l];
                        if !moves.is_empty() && best - cont > exercise_threshold(cont) {
                            drow[l] = arg as u16 + 1;
                        } else {
                            drow[l] = 0;
                        }
                        if best > cont {
                            vrow[l] = best;
                        }
                    }
                }
            });
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn submittable_prefix(grid: &GridSpec) -> usize {
    let k = grid.space.limits().max_pending;
    grid.space
        .configs()
        .iter()
        .take_while(|c| c.total_count() < k)
        .count()
}

fn growth_ratio(grid: &GridSpec, slice: &[f64]) -> f64 {
    let shape = Shape::of(grid);
    let per = shape.per_config();
    (0..slice.len())
        .into_par_iter()
        .with_min_len(4096)
        .map(|idx| {
            let local = idx % per;
            let k = local % shape.nq;
            let j = (local / shape.nq) % shape.nz;
            let i = local / (shape.nq * shape.nz);
            let (s, z, q) = (grid.s.value(i), grid.z.value(j), grid.q.value(k));
            slice[idx].abs() / (1.0 + s * s + z * z + q * q)
        })
        .reduce(|| 0.0, f64::max)
}

fn check_finite(slice: &[f64], n: usize) -> Result<()> {
    if slice.par_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(n))
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidGrid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// One backward step from `next` (time index `n + 1`) to time index `n`.
/// Returns the new slice, its decisions and the rate used at each node.
pub fn backward_step(
    problem: &CexDexProblem,
    grid: &GridSpec,
    n: usize,
    next: &[f64],
) -> Result<(Vec<f64>, Vec<u16>, Vec<f64>)> {
    if n >= grid.t_steps {
        return Err(Error::OffGrid(format!("time index {n} has no successor")));
    }
    let pre = Precomp::new(problem, grid)?;
    let shape = pre.shape;
    let mut cur = vec![0.0; shape.len()];
    let mut nu = vec![0.0; shape.len()];
    let mut dec = vec![0u16; submittable_prefix(grid) * shape.per_config()];
    pde_sweep(&pre, next, n + 1, &mut cur, &mut nu, grid.dt(), None);
    check_finite(&cur, n)?;
    project(grid, &shape, &mut cur, &mut dec);
    Ok((cur, dec, nu))
}

/// Solves backward from `v(T) = g` and returns the retained value slices,
/// the policy tables and diagnostics.
pub fn solve(problem: &CexDexProblem, grid: &GridSpec, opts: &SolveOptions) -> Result<Solution> {
    let terminal = terminal_slice(problem, grid);
    in_pool(opts.threads, || solve_inner(problem, grid, opts, terminal))?
}

/// Like [`solve`] but starting from arbitrary terminal data laid out as a
/// full slice.
pub fn solve_with_terminal(
    problem: &CexDexProblem,
    grid: &GridSpec,
    opts: &SolveOptions,
    terminal: Vec<f64>,
) -> Result<Solution> {
    if terminal.len() != grid.slice_len() {
        return Err(Error::InvalidGrid(format!(
            "terminal data has {} values, grid needs {}",
            terminal.len(),
            grid.slice_len()
        )));
    }
    in_pool(opts.threads, || solve_inner(problem, grid, opts, terminal))?
}

fn retained_indices(grid: &GridSpec, opts: &SolveOptions) -> Result<BTreeSet<usize>> {
    let mut keep = BTreeSet::from([0, grid.t_steps]);
    for &t in &opts.retain_times {
        keep.insert(grid.time_index(t)?);
    }
    Ok(keep)
}

fn nu_stride(grid: &GridSpec, opts: &SolveOptions) -> Option<usize> {
    if !opts.keep_nu {
        return None;
    }
    let bytes = grid.slice_len() * std::mem::size_of::<f32>();
    let budget = opts.nu_budget_mb.max(1) * 1024 * 1024;
    let slots = (budget / bytes.max(1)).max(2);
    let stride = (grid.t_steps + 1).div_ceil(slots - 1).max(1);
    Some(stride)
}

fn solve_inner(
    problem: &CexDexProblem,
    grid: &GridSpec,
    opts: &SolveOptions,
    terminal: Vec<f64>,
) -> Result<Solution> {
    let pre = Precomp::new(problem, grid)?;
    let shape = pre.shape;
    let dt = grid.dt();
    let keep = retained_indices(grid, opts)?;
    let stride = nu_stride(grid, opts);
    let sub = submittable_prefix(grid);
    let per = shape.per_config();

    if pre.clamp_events > 0 {
        log::warn!(
            "{} node/execution pairs clamped to the grid per step",
            pre.clamp_events
        );
    }

    let mut value = ValueField::new(shape, grid.t_steps, dt);
    let mut decisions: Vec<Vec<u16>> = vec![Vec::new(); grid.t_steps + 1];
    let mut nu_keep = std::collections::BTreeMap::new();

    let mut next = terminal;
    let c2 = growth_ratio(grid, &next);
    let mut max_ratio = c2;

    // Terminal slice: rates from g, decisions from the classifier.
    let mut scratch = vec![0.0; shape.len()];
    let mut nu = vec![0.0; shape.len()];
    pde_sweep(&pre, &next, grid.t_steps, &mut scratch, &mut nu, 0.0, None);
    let mut dec = vec![0u16; sub * per];
    let mut term = next.clone();
    project(grid, &shape, &mut term, &mut dec);
    decisions[grid.t_steps] = dec;
    if let Some(st) = stride {
        if grid.t_steps.is_multiple_of(st) || grid.t_steps == 0 {
            nu_keep.insert(grid.t_steps, to_f32(&nu));
        }
    }
    if keep.contains(&grid.t_steps) {
        value.insert(grid.t_steps, next.clone());
    }

    let mut residuals = Vec::new();
    let mut cur = scratch;
    for n in (0..grid.t_steps).rev() {
        pde_sweep(&pre, &next, n + 1, &mut cur, &mut nu, dt, None);
        check_finite(&cur, n)?;
        let mut dec = vec![0u16; sub * per];
        project(grid, &shape, &mut cur, &mut dec);
        let ratio = growth_ratio(grid, &cur);
        max_ratio = max_ratio.max(ratio);
        if ratio > opts.growth_factor * c2.max(f64::MIN_POSITIVE) {
            return Err(Error::GrowthViolation {
                t_index: n,
                value: ratio,
                envelope: opts.growth_factor * c2,
            });
        }
        if opts.residual_every > 0 && n % opts.residual_every == 0 {
            residuals.push((
                n,
                residual::residual_with(&pre, grid, &cur, &next, n + 1, dt),
            ));
        }
        decisions[n] = dec;
        if let Some(st) = stride {
            if n % st == 0 {
                nu_keep.insert(n, to_f32(&nu));
            }
        }
        if keep.contains(&n) {
            value.insert(n, cur.clone());
        }
        std::mem::swap(&mut next, &mut cur);
    }

    let moves = (0..sub)
        .map(|c| {
            grid.space
                .submits(c)
                .iter()
                .map(|m| Impulse {
                    level: m.level,
                    size: m.size,
                })
                .collect()
        })
        .collect();
    let policy = PolicyTables {
        shape,
        t_steps: grid.t_steps,
        dt,
        submittable: sub,
        moves,
        decisions,
        nu: nu_keep,
    };
    let diagnostics = SolveDiagnostics {
        t_steps: grid.t_steps,
        dt,
        stability_bound: grid.stability_bound(problem),
        clamp_events_per_step: pre.clamp_events,
        growth_constant: c2,
        max_growth_ratio: max_ratio,
        nu_stride: stride,
        residuals,
    };
    Ok(Solution {
        value,
        policy,
        diagnostics,
    })
}

/// `v(0)` of the optimal policy and of the policy that keeps the optimal
/// intervention times, sizes and CEX rate but draws the fee level uniformly.
#[derive(Debug, Clone)]
pub struct RandomFeeEvaluation {
    pub optimal: Vec<f64>,
    pub random: Vec<f64>,
    pub shape: Shape,
}

/// Solves the QVI and, in lockstep, evaluates the random-fee policy by
/// averaging the value over levels wherever the optimal policy submits.
pub fn solve_with_random_fee_evaluation(
    problem: &CexDexProblem,
    grid: &GridSpec,
    threads: Option<usize>,
) -> Result<RandomFeeEvaluation> {
    in_pool(threads, || random_fee_inner(problem, grid))?
}

fn random_fee_inner(problem: &CexDexProblem, grid: &GridSpec) -> Result<RandomFeeEvaluation> {
    let pre = Precomp::new(problem, grid)?;
    let shape = pre.shape;
    let per = shape.per_config();
    let dt = grid.dt();
    let sub = submittable_prefix(grid);
    let levels = problem.ladder.levels();

    // Per submittable config and move: the targets of the same size at every level.
    let level_targets: Vec<Vec<Vec<usize>>> = (0..sub)
        .map(|c| {
            let moves = grid.space.submits(c);
            moves
                .iter()
                .map(|m| {
                    (0..levels)
                        .filter_map(|l| {
                            moves
                                .iter()
                                .find(|o| o.level == l && o.size_index == m.size_index)
                                .map(|o| o.target)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut next = terminal_slice(problem, grid);
    let mut next_r = next.clone();
    let mut cur = vec![0.0; shape.len()];
    let mut cur_r = vec![0.0; shape.len()];
    let mut nu = vec![0.0; shape.len()];
    let mut nu_r = vec![0.0; shape.len()];
    for n in (0..grid.t_steps).rev() {
        pde_sweep(&pre, &next, n + 1, &mut cur, &mut nu, dt, None);
        let mut dec = vec![0u16; sub * per];
        project(grid, &shape, &mut cur, &mut dec);
        pde_sweep(&pre, &next_r, n + 1, &mut cur_r, &mut nu_r, dt, Some(&nu));
        check_finite(&cur, n)?;
        check_finite(&cur_r, n)?;
        // Submittable configs have fewer orders than their targets, so
        // reading `cur_r` targets after their own update is consistent when
        // visiting configs from the highest index down.
        for c in (0..sub).rev() {
            let (left, right) = cur_r.split_at_mut((c + 1) * per);
            let base = (c + 1) * per;
            let block = &mut left[c * per..];
            let dblock = &dec[c * per..(c + 1) * per];
            block
                .par_iter_mut()
                .zip(dblock.par_iter())
                .enumerate()
                .for_each(|(local, (v, &d))| {
                    if d > 0 {
                        let targets = &level_targets[c][d as usize - 1];
                        let sum: f64 = targets.iter().map(|&t| right[t * per + local - base]).sum();
                        *v = sum / targets.len() as f64;
                    }
                });
        }
        std::mem::swap(&mut next, &mut cur);
        std::mem::swap(&mut next_r, &mut cur_r);
    }
    Ok(RandomFeeEvaluation {
        optimal: next,
        random: next_r,
        shape,
    })
}

#[cfg(test)]
mod tests;
