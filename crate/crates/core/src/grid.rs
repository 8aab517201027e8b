//! Discretization of `(t, s, z, q)` and the pending-order configuration set.

use serde::{Deserialize, Serialize};

use crate::cexdex::CexDexProblem;
use crate::control::ConfigSpace;
use crate::error::{Error, Result};

/// Uniform one-dimensional lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// Bracketing cell for linear interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: usize,
    /// Weight on `lo + 1`.
    pub w: f64,
    pub clamped: bool,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        let a = Self { min, max, count };
        a.validate()?;
        Ok(a)
    }

    pub fn centered(center: f64, half_width: f64, count: usize) -> Result<Self> {
        Self::new(center - half_width, center + half_width, count)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 3 {
            return Err(Error::InvalidGrid(format!(
                "axis needs at least 3 points, got {}",
                self.count
            )));
        }
        if !(self.min < self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "axis bounds [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.max
        } else {
            self.min + self.step() * i as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }

    pub fn bracket(&self, x: f64) -> Bracket {
        let h = self.step();
        let pos = (x - self.min) / h;
        let last = (self.count - 1) as f64;
        if !(pos >= 0.0) {
            return Bracket {
                lo: 0,
                w: 0.0,
                clamped: pos < -1e-9 || pos.is_nan(),
            };
        }
        if pos >= last {
            return Bracket {
                lo: self.count - 2,
                w: 1.0,
                clamped: pos > last + 1e-9,
            };
        }
        let lo = (pos.floor() as usize).min(self.count - 2);
        Bracket {
            lo,
            w: pos - lo as f64,
            clamped: false,
        }
    }

    pub fn nearest(&self, x: f64) -> usize {
        let pos = ((x - self.min) / self.step()).round();
        if pos <= 0.0 {
            0
        } else {
            (pos as usize).min(self.count - 1)
        }
    }

    /// Index of the node equal to `x` within a small tolerance.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let i = self.nearest(x);
        ((self.value(i) - x).abs() <= 1e-9 * self.step().max(1.0)).then_some(i)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min - 1e-12 && x <= self.max + 1e-12
    }
}

/// Full discretization: time stepping, spatial axes, volume menu, ν box and
/// the enumerated configuration space.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub t_steps: usize,
    pub horizon: f64,
    pub s: Axis,
    pub z: Axis,
    pub q: Axis,
    pub volume_grid: Vec<f64>,
    /// Box `[-nu_max, nu_max]` on the CEX trading rate.
    pub nu_max: f64,
    pub space: ConfigSpace,
}

/// Axis and step parameters before the configuration space is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridParams {
    /// Number of points on each of the s and z axes.
    pub sz_points: usize,
    /// Half-width of the s and z axes in units of `sigma_s * sqrt(T)`.
    pub sz_sigmas: f64,
    pub q_points: usize,
    pub q_max: f64,
    /// Minimum number of time steps; raised if the stability bound needs more.
    pub min_t_steps: usize,
    /// Volume menu points per sign, evenly spaced on `(0, volume_bound]`.
    pub volume_points: usize,
    pub nu_max: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            sz_points: 61,
            sz_sigmas: 3.0,
            q_points: 41,
            q_max: 25.0,
            min_t_steps: 200,
            volume_points: 8,
            nu_max: 60.0,
        }
    }
}

/// Symmetric volume menu `±bound * k / points`, `k = 1..=points`, ascending.
pub fn symmetric_volume_grid(bound: f64, points: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (1..=points)
        .flat_map(|k| {
            let v = bound * k as f64 / points as f64;
            [-v, v]
        })
        .collect();
    g.sort_by(f64::total_cmp);
    g
}

impl GridSpec {
    /// Builds a grid and rejects it if `dt` exceeds the explicit-scheme bound.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        problem: &CexDexProblem,
        s: Axis,
        z: Axis,
        q: Axis,
        t_steps: usize,
        volume_grid: Vec<f64>,
        nu_max: f64,
    ) -> Result<Self> {
        s.validate()?;
        z.validate()?;
        q.validate()?;
        if s.min <= 0.0 || z.min <= 0.0 {
            return Err(Error::InvalidGrid(
                "s and z axes must be strictly positive".into(),
            ));
        }
        if (q.min + q.max).abs() > 1e-9 * q.max.abs().max(1.0) {
            return Err(Error::InvalidGrid(
                "q axis must be symmetric about 0".into(),
            ));
        }
        if !(nu_max > 0.0) {
            return Err(Error::InvalidGrid("nu_max must be positive".into()));
        }
        let space = ConfigSpace::new(&problem.ladder, problem.limits, &volume_grid)?;
        let grid = Self {
            t_steps,
            horizon: problem.market.horizon,
            s,
            z,
            q,
            volume_grid,
            nu_max,
            space,
        };
        if t_steps > 0 {
            let bound = grid.stability_bound(problem);
            if grid.dt() > bound {
                return Err(Error::StabilityViolation {
                    dt: grid.dt(),
                    bound,
                });
            }
        }
        Ok(grid)
    }

    /// Grid with the smallest step count `>= min_t_steps` whose step is at most
    /// 0.9 of the stability bound. Raised counts are rounded up to a multiple
    /// of 10 so tenths of the horizon stay on the time grid.
    #[allow(clippy::too_many_arguments)]
    pub fn with_auto_steps(
        problem: &CexDexProblem,
        s: Axis,
        z: Axis,
        q: Axis,
        min_t_steps: usize,
        volume_grid: Vec<f64>,
        nu_max: f64,
    ) -> Result<Self> {
        let probe = Self::new(problem, s, z, q, 0, volume_grid.clone(), nu_max)?;
        let bound = probe.stability_bound(problem);
        let needed = (problem.market.horizon / (0.9 * bound)).ceil() as usize;
        let steps = if needed > min_t_steps {
            needed.div_ceil(10) * 10
        } else {
            min_t_steps
        };
        Self::new(problem, s, z, q, steps.max(1), volume_grid, nu_max)
    }

    /// Grid built from [`GridParams`] around the problem's initial prices.
    pub fn from_params(problem: &CexDexProblem, p: &GridParams) -> Result<Self> {
        let m = &problem.market;
        let half = p.sz_sigmas * m.sigma_s * m.horizon.sqrt();
        if half >= m.s0 {
            return Err(Error::InvalidGrid(
                "s/z axes would reach non-positive prices".into(),
            ));
        }
        let s = Axis::centered(m.s0, half, p.sz_points)?;
        let z = Axis::centered(m.s0, half, p.sz_points)?;
        let q = Axis::new(-p.q_max, p.q_max, p.q_points)?;
        let vg = if problem.limits.max_pending == 0 {
            Vec::new()
        } else {
            symmetric_volume_grid(problem.limits.volume_bound, p.volume_points)
        };
        Self::with_auto_steps(problem, s, z, q, p.min_t_steps, vg, p.nu_max)
    }

    pub fn dt(&self) -> f64 {
        if self.t_steps == 0 {
            0.0
        } else {
            self.horizon / self.t_steps as f64
        }
    }

    pub fn time(&self, n: usize) -> f64 {
        if n >= self.t_steps {
            self.horizon
        } else {
            n as f64 * self.dt()
        }
    }

    /// Time index for `t`, which must lie on the time grid.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        if self.t_steps == 0 {
            return if t.abs() <= 1e-12 || (t - self.horizon).abs() <= 1e-12 {
                Ok(0)
            } else {
                Err(Error::OffGrid(format!("t = {t}")))
            };
        }
        let pos = t / self.dt();
        let n = pos.round();
        if n < 0.0 || n > self.t_steps as f64 || (pos - n).abs() > 1e-6 {
            return Err(Error::OffGrid(format!(
                "t = {t} is not a multiple of dt = {}",
                self.dt()
            )));
        }
        Ok(n as usize)
    }

    /// Nearest time index to `t`, clamped to the horizon.
    pub fn nearest_time_index(&self, t: f64) -> usize {
        if self.t_steps == 0 {
            return 0;
        }
        ((t / self.dt()).round().max(0.0) as usize).min(self.t_steps)
    }

    pub fn nodes_per_config(&self) -> usize {
        self.s.count * self.z.count * self.q.count
    }

    pub fn slice_len(&self) -> usize {
        self.nodes_per_config() * self.space.len()
    }

    /// Flat offset of node `(i, j, k)` in config `c`.
    #[inline]
    pub fn offset(&self, c: usize, i: usize, j: usize, k: usize) -> usize {
        ((c * self.s.count + i) * self.z.count + j) * self.q.count + k
    }

    fn max_dislocation(&self) -> f64 {
        (self.s.max - self.z.min)
            .abs()
            .max((self.z.max - self.s.min).abs())
    }

    /// Explicit-scheme step bound
    /// `1 / (σS²/Δs² + σZ²/Δz² + κ max|s−z| / Δz + Σ rates + ν̄ / Δq)`.
    pub fn stability_bound(&self, problem: &CexDexProblem) -> f64 {
        let m = &problem.market;
        let ds = self.s.step();
        let dz = self.z.step();
        let rates: f64 = if problem.limits.max_pending > 0 {
            problem.ladder.rates().iter().sum()
        } else {
            0.0
        };
        let total = m.sigma_s.powi(2) / (ds * ds)
            + m.sigma_z.powi(2) / (dz * dz)
            + m.kappa * self.max_dislocation() / dz
            + rates
            + self.nu_max / self.q.step();
        1.0 / total
    }
}
