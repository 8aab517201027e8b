//! Post-processing of solved policies: exercise-region and fee maps over the
//! (s, z) plane, summary statistics, ladder sweeps and the smooth-fit check.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::cexdex::CexDexProblem;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::solver::{solve, PolicyTables, SolveOptions, ValueField};

/// Label of one (s, z) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CellLabel {
    Continue,
    Exercise { level: usize, size: f64 },
}

impl CellLabel {
    pub fn is_exercise(&self) -> bool {
        matches!(self, CellLabel::Exercise { .. })
    }
}

/// Exercise/continuation labels over the (s, z) grid at one (t, q) and
/// pending config. Cells are stored `i * nz + j` with `i` the s index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub t_index: usize,
    pub q_index: usize,
    pub t: f64,
    pub q: f64,
    pub config: usize,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    pub labels: Vec<CellLabel>,
}

/// Chosen fee level per (s, z) cell, `None` where the policy waits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeMap {
    pub t_index: usize,
    pub q_index: usize,
    pub t: f64,
    pub q: f64,
    pub levels_in_ladder: usize,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    pub levels: Vec<Option<usize>>,
}

fn locate(grid: &GridSpec, t: f64, q: f64) -> Result<(usize, usize)> {
    let n = grid.time_index(t)?;
    let k = grid
        .q
        .index_of(q)
        .ok_or(Error::OffGrid(format!("q = {q} is not a grid point")))?;
    Ok((n, k))
}

/// Region map of the empty config at `(t, q)`; both must be grid points.
pub fn extract_region(policy: &PolicyTables, grid: &GridSpec, t: f64, q: f64) -> Result<RegionMap> {
    extract_region_for(policy, grid, t, q, grid.space.empty_index())
}

pub fn extract_region_for(
    policy: &PolicyTables,
    grid: &GridSpec,
    t: f64,
    q: f64,
    config: usize,
) -> Result<RegionMap> {
    let (n, k) = locate(grid, t, q)?;
    if config >= grid.space.len() {
        return Err(Error::UnknownConfig);
    }
    let (ns, nz) = (grid.s.count, grid.z.count);
    let mut labels = Vec::with_capacity(ns * nz);
    for i in 0..ns {
        for j in 0..nz {
            labels.push(match policy.impulse(n, i, j, k, config) {
                None => CellLabel::Continue,
                Some(imp) => CellLabel::Exercise {
                    level: imp.level,
                    size: imp.size,
                },
            });
        }
    }
    Ok(RegionMap {
        t_index: n,
        q_index: k,
        t: grid.time(n),
        q: grid.q.value(k),
        config,
        s: grid.s.values(),
        z: grid.z.values(),
        labels,
    })
}

pub fn fee_map(policy: &PolicyTables, grid: &GridSpec, t: f64, q: f64) -> Result<FeeMap> {
    let region = extract_region(policy, grid, t, q)?;
    Ok(FeeMap::from_region(&region, grid.space.levels()))
}

/// Band and sidedness summary of a region map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub cells: usize,
    pub exercise: usize,
    /// Exercise share of all cells.
    pub exercise_measure: f64,
    /// Every cell with `s = z` continues.
    pub diagonal_continues: bool,
    /// Exercise cells with `s > z` and with `s < z`.
    pub exercise_above: usize,
    pub exercise_below: usize,
    pub buys: usize,
    pub sells: usize,
}

impl RegionMap {
    pub fn label(&self, i: usize, j: usize) -> CellLabel {
        self.labels[i * self.z.len() + j]
    }

    pub fn stats(&self) -> RegionStats {
        let nz = self.z.len();
        let mut st = RegionStats {
            cells: self.labels.len(),
            exercise: 0,
            exercise_measure: 0.0,
            diagonal_continues: true,
            exercise_above: 0,
            exercise_below: 0,
            buys: 0,
            sells: 0,
        };
        for (idx, l) in self.labels.iter().enumerate() {
            let (s, z) = (self.s[idx / nz], self.z[idx % nz]);
            match *l {
                CellLabel::Continue => {}
                CellLabel::Exercise { size, .. } => {
                    st.exercise += 1;
                    if (s - z).abs() <= 1e-9 * s.abs() {
                        st.diagonal_continues = false;
                    } else if s > z {
                        st.exercise_above += 1;
                    } else {
                        st.exercise_below += 1;
                    }
                    if size > 0.0 {
                        st.buys += 1;
                    } else {
                        st.sells += 1;
                    }
                }
            }
        }
        if st.cells > 0 {
            st.exercise_measure = st.exercise as f64 / st.cells as f64;
        }
        st
    }

    /// `Some(true)` if every exercise cell sells, `Some(false)` if every one
    /// buys, `None` if mixed or empty.
    pub fn one_sided_sell(&self) -> Option<bool> {
        let st = self.stats();
        match (st.buys, st.sells) {
            (0, s) if s > 0 => Some(true),
            (b, 0) if b > 0 => Some(false),
            _ => None,
        }
    }
}

impl FeeMap {
    pub fn from_region(region: &RegionMap, levels_in_ladder: usize) -> Self {
        Self {
            t_index: region.t_index,
            q_index: region.q_index,
            t: region.t,
            q: region.q,
            levels_in_ladder,
            s: region.s.clone(),
            z: region.z.clone(),
            levels: region
                .labels
                .iter()
                .map(|l| match l {
                    CellLabel::Continue => None,
                    CellLabel::Exercise { level, .. } => Some(*level),
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.levels.iter().all(Option::is_none)
    }

    /// Number of cells choosing `level`.
    pub fn level_count(&self, level: usize) -> usize {
        self.levels.iter().filter(|l| **l == Some(level)).count()
    }

    /// Spearman rank correlation between `|s - z|` and the chosen level over
    /// exercise cells. `None` with fewer than two cells or no variation.
    pub fn dislocation_correlation(&self) -> Option<f64> {
        let nz = self.z.len();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (idx, l) in self.levels.iter().enumerate() {
            if let Some(level) = l {
                x.push((self.s[idx / nz] - self.z[idx % nz]).abs());
                y.push(*level as f64);
            }
        }
        spearman(&x, &y)
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut a = 0;
    while a < idx.len() {
        let mut b = a;
        while b + 1 < idx.len() && v[idx[b + 1]] == v[idx[a]] {
            b += 1;
        }
        let r = (a + b) as f64 / 2.0 + 1.0;
        for &i in &idx[a..=b] {
            out[i] = r;
        }
        a = b + 1;
    }
    out
}

/// Spearman correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Ratio of the ν range across s to the range across q for the empty config
/// at time index `n`, taken through `(z0, q)` and `(s, z0)` lines and
/// averaged. Small values mean the rate is driven by inventory.
pub fn nu_sensitivity(policy: &PolicyTables, grid: &GridSpec, n: usize, z0: f64) -> Option<f64> {
    let (_, nu) = policy.nu_slice_near(n)?;
    let sh = policy.shape;
    let j = grid.z.nearest(z0);
    let at = |i: usize, k: usize| nu[sh.offset(0, i, j, k)] as f64;
    let range = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        hi - lo
    };
    let over_s: f64 = (0..sh.nq)
        .map(|k| range(&mut (0..sh.ns).map(|i| at(i, k))))
        .sum::<f64>()
        / sh.nq as f64;
    let over_q: f64 = (0..sh.ns)
        .map(|i| range(&mut (0..sh.nq).map(|k| at(i, k))))
        .sum::<f64>()
        / sh.ns as f64;
    if over_q == 0.0 {
        return None;
    }
    Some(over_s / over_q)
}

/// One row of a ladder-size sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub levels: usize,
    pub norm: f64,
    /// `norm / previous norm - 1`; zero for the first row.
    pub relative_increment: f64,
}

/// Frobenius norm of `v(0, ., ., ., empty)` for nested prefixes of the
/// problem's ladder. Every solve uses the step count required by the
/// largest ladder so the rows differ only in the admissible fee set.
pub fn value_norm_sweep(
    problem: &CexDexProblem,
    grid: &GridSpec,
    ladder_sizes: &[usize],
    threads: Option<usize>,
) -> Result<Vec<SweepRow>> {
    if ladder_sizes.is_empty() {
        return Ok(Vec::new());
    }
    let mut problems = Vec::with_capacity(ladder_sizes.len());
    for &n in ladder_sizes {
        let mut p = problem.clone();
        p.ladder = problem.ladder.prefix(n)?;
        problems.push(p);
    }
    let mut t_steps = grid.t_steps;
    for p in &problems {
        let g = GridSpec::with_auto_steps(
            p,
            grid.s,
            grid.z,
            grid.q,
            grid.t_steps,
            grid.volume_grid.clone(),
            grid.nu_max,
        )?;
        t_steps = t_steps.max(g.t_steps);
    }
    let opts = SolveOptions {
        threads,
        ..SolveOptions::value_only()
    };
    let mut rows: Vec<SweepRow> = Vec::with_capacity(problems.len());
    for (p, &n) in problems.iter().zip(ladder_sizes) {
        let g = GridSpec::new(
            p,
            grid.s,
            grid.z,
            grid.q,
            t_steps,
            grid.volume_grid.clone(),
            grid.nu_max,
        )?;
        let sol = solve(p, &g, &opts)?;
        let norm = sol.value.frobenius_norm(0, g.space.empty_index())?;
        let relative_increment = rows.last().map_or(0.0, |r| norm / r.norm - 1.0);
        rows.push(SweepRow {
            levels: n,
            norm,
            relative_increment,
        });
    }
    Ok(rows)
}

/// Gradient jumps across the exercise boundary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothFitStats {
    /// Boundary pairs with a full stencil on both sides.
    pub pairs: usize,
    /// Boundary pairs too close to the grid edge to evaluate.
    pub excluded: usize,
    /// Largest and mean `|grad_exercise - grad_continue|`, per axis (s, z, q).
    pub max_jump: [f64; 3],
    pub mean_jump: [f64; 3],
    /// Same, divided by the axis spacing.
    pub max_jump_per_step: [f64; 3],
    pub mean_jump_per_step: [f64; 3],
}

/// One-sided difference gradients on either side of every adjacent
/// continue/exercise pair of the empty config at time index `n`.
pub fn smooth_fit_diagnostic(
    value: &ValueField,
    policy: &PolicyTables,
    grid: &GridSpec,
    n: usize,
) -> Result<SmoothFitStats> {
    let v = value.config_slice(n, grid.space.empty_index())?;
    let sh = value.shape;
    let steps = [grid.s.step(), grid.z.step(), grid.q.step()];
    let dims = [sh.ns, sh.nz, sh.nq];
    let strides = [sh.nz * sh.nq, sh.nq, 1];
    let mut st = SmoothFitStats::default();
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    let cont = |i: usize, j: usize, k: usize| policy.continuation(n, i, j, k, 0);
    for i in 0..sh.ns {
        for j in 0..sh.nz {
            for k in 0..sh.nq {
                let idx = [i, j, k];
                for axis in 0..3 {
                    if idx[axis] + 1 >= dims[axis] {
                        continue;
                    }
                    let mut nb = idx;
                    nb[axis] += 1;
                    if cont(i, j, k) == cont(nb[0], nb[1], nb[2]) {
                        continue;
                    }
                    let p = idx[axis];
                    if p == 0 || p + 2 >= dims[axis] {
                        st.excluded += 1;
                        continue;
                    }
                    let at = (i * sh.nz + j) * sh.nq + k;
                    let d = strides[axis];
                    let h = steps[axis];
                    let left = (v[at] - v[at - d]) / h;
                    let right = (v[at + 2 * d] - v[at + d]) / h;
                    let jump = (right - left).abs();
                    st.pairs += 1;
                    counts[axis] += 1;
                    sums[axis] += jump;
                    st.max_jump[axis] = st.max_jump[axis].max(jump);
                }
            }
        }
    }
    for axis in 0..3 {
        if counts[axis] > 0 {
            st.mean_jump[axis] = sums[axis] / counts[axis] as f64;
        }
        st.max_jump_per_step[axis] = st.max_jump[axis] / steps[axis];
        st.mean_jump_per_step[axis] = st.mean_jump[axis] / steps[axis];
    }
    Ok(st)
}

/// File stem encoding the slice and the run: `{kind}_t{t}_q{q}_N{n}_{hash}`.
pub fn artifact_stem(kind: &str, t: f64, q: f64, levels: usize, hash: &str) -> String {
    let short = &hash[..hash.len().min(12)];
    format!("{kind}_t{t:.3}_q{q:+.3}_N{levels}_{short}")
}

#[derive(Serialize)]
struct RegionRow {
    s: f64,
    z: f64,
    label: &'static str,
    level: Option<usize>,
    size: Option<f64>,
}

pub fn write_region_csv(region: &RegionMap, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let nz = region.z.len();
    for (idx, l) in region.labels.iter().enumerate() {
        let (label, level, size) = match *l {
            CellLabel::Continue => ("continue", None, None),
            CellLabel::Exercise { level, size } => ("exercise", Some(level), Some(size)),
        };
        w.serialize(RegionRow {
            s: region.s[idx / nz],
            z: region.z[idx % nz],
            label,
            level,
            size,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FeeRow {
    s: f64,
    z: f64,
    level: Option<usize>,
}

pub fn write_fee_csv(map: &FeeMap, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let nz = map.z.len();
    for (idx, l) in map.levels.iter().enumerate() {
        w.serialize(FeeRow {
            s: map.s[idx / nz],
            z: map.z[idx % nz],
            level: *l,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Artifact(format!("csv: {e}"))
}

const CELL_PX: u32 = 8;
const WAIT: Rgb<u8> = Rgb([235, 235, 235]);

fn shade(base: [u8; 3], level: usize, levels: usize) -> Rgb<u8> {
    // darker for higher levels
    let f = 1.0 - 0.6 * level as f64 / levels.max(2).saturating_sub(1).max(1) as f64;
    Rgb(base.map(|c| (c as f64 * f).round() as u8))
}

/// Heatmap with s along x and z increasing upwards.
fn render(ns: usize, nz: usize, color: impl Fn(usize, usize) -> Rgb<u8>) -> RgbImage {
    let mut img = RgbImage::new(ns as u32 * CELL_PX, nz as u32 * CELL_PX);
    for i in 0..ns {
        for j in 0..nz {
            let c = color(i, j);
            let y0 = (nz - 1 - j) as u32 * CELL_PX;
            for dx in 0..CELL_PX {
                for dy in 0..CELL_PX {
                    img.put_pixel(i as u32 * CELL_PX + dx, y0 + dy, c);
                }
            }
        }
    }
    img
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    let enc = image::codecs::png::PngEncoder::new(f);
    img.write_with_encoder(enc)
        .map_err(|e| Error::Artifact(format!("png: {e}")))
}

/// Buys in blue, sells in red, darker for higher fee levels.
pub fn write_region_png(region: &RegionMap, levels: usize, path: &Path) -> Result<()> {
    let img = render(region.s.len(), region.z.len(), |i, j| {
        match region.label(i, j) {
            CellLabel::Continue => WAIT,
            CellLabel::Exercise { level, size } if size > 0.0 => {
                shade([60, 110, 230], level, levels)
            }
            CellLabel::Exercise { level, .. } => shade([230, 70, 60], level, levels),
        }
    });
    save_png(&img, path)
}

pub fn write_fee_png(map: &FeeMap, path: &Path) -> Result<()> {
    let nz = map.z.len();
    let img = render(map.s.len(), nz, |i, j| match map.levels[i * nz + j] {
        None => WAIT,
        Some(l) => shade([40, 160, 90], l, map.levels_in_ladder),
    });
    save_png(&img, path)
}

/// Writes CSV and PNG for a region map and its fee map into `dir`.
pub fn write_maps(
    region: &RegionMap,
    levels: usize,
    hash: &str,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let fees = FeeMap::from_region(region, levels);
    let r = artifact_stem("regions", region.t, region.q, levels, hash);
    let f = artifact_stem("fees", region.t, region.q, levels, hash);
    let paths = vec![
        dir.join(format!("{r}.csv")),
        dir.join(format!("{r}.png")),
        dir.join(format!("{f}.csv")),
        dir.join(format!("{f}.png")),
    ];
    write_region_csv(region, &paths[0])?;
    write_region_png(region, levels, &paths[1])?;
    write_fee_csv(&fees, &paths[2])?;
    write_fee_png(&fees, &paths[3])?;
    Ok(paths)
}
