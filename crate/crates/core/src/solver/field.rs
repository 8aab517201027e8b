use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Bracket, GridSpec};

/// Node-count layout shared by value and policy arrays.
///
/// A slice is stored config-major: `((c * ns + i) * nz + j) * nq + k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub ns: usize,
    pub nz: usize,
    pub nq: usize,
    pub nc: usize,
}

impl Shape {
    pub fn of(grid: &GridSpec) -> Self {
        Self {
            ns: grid.s.count,
            nz: grid.z.count,
            nq: grid.q.count,
            nc: grid.space.len(),
        }
    }

    pub fn per_config(&self) -> usize {
        self.ns * self.nz * self.nq
    }

    pub fn len(&self) -> usize {
        self.per_config() * self.nc
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn offset(&self, c: usize, i: usize, j: usize, k: usize) -> usize {
        ((c * self.ns + i) * self.nz + j) * self.nq + k
    }
}

/// Value function on the grid at the retained time indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub shape: Shape,
    pub t_steps: usize,
    pub dt: f64,
    pub(crate) slices: BTreeMap<usize, Vec<f64>>,
}

impl ValueField {
    pub fn new(shape: Shape, t_steps: usize, dt: f64) -> Self {
        Self {
            shape,
            t_steps,
            dt,
            slices: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, n: usize, slice: Vec<f64>) {
        debug_assert_eq!(slice.len(), self.shape.len());
        self.slices.insert(n, slice);
    }

    pub fn retained(&self) -> impl Iterator<Item = usize> + '_ {
        self.slices.keys().copied()
    }

    pub fn has(&self, n: usize) -> bool {
        self.slices.contains_key(&n)
    }

    pub fn slice(&self, n: usize) -> Result<&[f64]> {
        self.slices
            .get(&n)
            .map(Vec::as_slice)
            .ok_or(Error::SliceNotRetained(n))
    }

    /// Values of one config at time index `n`, laid out `(i * nz + j) * nq + k`.
    pub fn config_slice(&self, n: usize, c: usize) -> Result<&[f64]> {
        let per = self.shape.per_config();
        Ok(&self.slice(n)?[c * per..(c + 1) * per])
    }

    pub fn get(&self, n: usize, i: usize, j: usize, k: usize, c: usize) -> Result<f64> {
        Ok(self.slice(n)?[self.shape.offset(c, i, j, k)])
    }

    /// Frobenius norm over `(s, z, q)` of config `c` at time index `n`.
    pub fn frobenius_norm(&self, n: usize, c: usize) -> Result<f64> {
        Ok(self
            .config_slice(n, c)?
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt())
    }
}

/// Optimal impulse at a node, if any.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impulse {
    pub level: usize,
    pub size: f64,
}

/// Policy per node: continuation flag and chosen impulse for configs that
/// can still submit, plus the CEX rate at the retained ν slices.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTables {
    pub shape: Shape,
    pub t_steps: usize,
    pub dt: f64,
    /// Number of leading configs (by index) that can still submit.
    pub submittable: usize,
    /// Per submittable config: decodable moves, index `code - 1`.
    pub moves: Vec<Vec<Impulse>>,
    /// Per time index: `0` = continue, `m + 1` = exercise move `m`.
    pub(crate) decisions: Vec<Vec<u16>>,
    pub(crate) nu: BTreeMap<usize, Vec<f32>>,
}

impl PolicyTables {
    fn decision_code(&self, n: usize, i: usize, j: usize, k: usize, c: usize) -> u16 {
        if c >= self.submittable {
            return 0;
        }
        self.decisions[n][self.shape.offset(c, i, j, k)]
    }

    pub fn continuation(&self, n: usize, i: usize, j: usize, k: usize, c: usize) -> bool {
        self.decision_code(n, i, j, k, c) == 0
    }

    pub fn impulse(&self, n: usize, i: usize, j: usize, k: usize, c: usize) -> Option<Impulse> {
        match self.decision_code(n, i, j, k, c) {
            0 => None,
            code => Some(self.moves[c][code as usize - 1]),
        }
    }

    /// Time indices with a stored ν slice.
    pub fn nu_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.nu.keys().copied()
    }

    pub fn has_nu(&self) -> bool {
        !self.nu.is_empty()
    }

    /// Stored ν slice closest in time to `n`.
    pub fn nu_slice_near(&self, n: usize) -> Option<(usize, &[f32])> {
        let after = self.nu.range(n..).next();
        let before = self.nu.range(..n).next_back();
        let pick = match (before, after) {
            (Some(b), Some(a)) => {
                if n - b.0 < a.0 - n {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => return None,
        };
        Some((*pick.0, pick.1.as_slice()))
    }

    pub fn nu_star(&self, n: usize, i: usize, j: usize, k: usize, c: usize) -> Option<f64> {
        self.nu
            .get(&n)
            .map(|s| s[self.shape.offset(c, i, j, k)] as f64)
    }

    fn nu_trilinear(&self, slice: &[f32], c: usize, s: Bracket, z: Bracket, q: Bracket) -> f64 {
        let mut out = 0.0;
        for (di, ws) in [(0, 1.0 - s.w), (1, s.w)] {
            for (dj, wz) in [(0, 1.0 - z.w), (1, z.w)] {
                for (dk, wq) in [(0, 1.0 - q.w), (1, q.w)] {
                    let w = ws * wz * wq;
                    if w != 0.0 {
                        out +=
                            w * slice[self.shape.offset(c, s.lo + di, z.lo + dj, q.lo + dk)] as f64;
                    }
                }
            }
        }
        out
    }

    /// ν at fractional time index `tn`: trilinear in (s, z, q) on the stored
    /// slices on either side of `tn`, linear in time between them.
    pub fn nu_interp(&self, tn: f64, c: usize, s: Bracket, z: Bracket, q: Bracket) -> Option<f64> {
        let tn = tn.max(0.0);
        let lo = self.nu.range(..=tn.floor() as usize).next_back();
        let hi = self.nu.range(tn.ceil() as usize..).next();
        match (lo, hi) {
            (Some((&a, va)), Some((&b, vb))) if b > a => {
                let w = (tn - a as f64) / (b - a) as f64;
                Some(
                    (1.0 - w) * self.nu_trilinear(va, c, s, z, q)
                        + w * self.nu_trilinear(vb, c, s, z, q),
                )
            }
            (Some((_, v)), _) | (None, Some((_, v))) => Some(self.nu_trilinear(v, c, s, z, q)),
            (None, None) => None,
        }
    }
}
