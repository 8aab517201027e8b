//! Pointwise finite-difference operators shared by the solver, the residual
//! check and the random-fee evaluation.

use crate::cexdex::{psi, swap_cashflow, CexDexProblem, MarketParams};
use crate::error::{Error, Result};
use crate::grid::{Bracket, GridSpec};

use super::riccati::riccati_reference;

use super::field::Shape;

/// How the CEX rate enters the continuous Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateChoice {
    /// Supremum over ν in `[-nu_max, nu_max]`.
    Optimize,
    /// Evaluate at a given ν.
    Fixed(f64),
}

/// Continuous part of the Hamiltonian at one node and the rate achieving it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousTerm {
    pub value: f64,
    pub nu: f64,
}

pub(crate) struct ExecTable {
    pub rate: f64,
    pub target: usize,
    /// Per z index: cash flow at execution and post-impact z bracket.
    pub z: Vec<(f64, Bracket)>,
    /// Per q index: post-trade q bracket, the part of the trade beyond the
    /// q axis and `(q + vol)² - q_edge²` for that overflow.
    pub q: Vec<(Bracket, f64, f64)>,
}

/// Grid geometry and per-grid lookup tables.
pub(crate) struct Precomp {
    pub shape: Shape,
    pub s_vals: Vec<f64>,
    pub z_vals: Vec<f64>,
    pub q_vals: Vec<f64>,
    pub ds: f64,
    pub dz: f64,
    pub dq: f64,
    pub nu_max: f64,
    pub market: MarketParams,
    pub exec: Vec<Vec<ExecTable>>,
    /// Riccati inventory coefficient at every time index.
    pub theta: Vec<f64>,
    /// Node/execution pairs whose post-execution state was clamped to the grid.
    pub clamp_events: u64,
}

impl Precomp {
    pub fn new(problem: &CexDexProblem, grid: &GridSpec) -> Result<Self> {
        let shape = Shape::of(grid);
        let s_vals = grid.s.values();
        let z_vals = grid.z.values();
        let q_vals = grid.q.values();
        let m = problem.market;
        let mut exec = Vec::with_capacity(grid.space.len());
        let mut clamp_events = 0u64;
        for c in 0..grid.space.len() {
            let mut tables = Vec::new();
            for mv in grid.space.executes(c) {
                let mut zt = Vec::with_capacity(shape.nz);
                for &z in &z_vals {
                    let cash = swap_cashflow(mv.volume, z, m.depth)? - problem.ladder.fee(mv.level);
                    let post = z + psi(z, m.depth)? * mv.volume;
                    if post <= 0.0 {
                        return Err(Error::NonPositivePrice(post));
                    }
                    zt.push((cash, grid.z.bracket(post)));
                }
                let qt: Vec<(Bracket, f64, f64)> = q_vals
                    .iter()
                    .map(|&q| {
                        let post = q + mv.volume;
                        let edge = post.clamp(grid.q.min, grid.q.max);
                        (grid.q.bracket(post), post - edge, post * post - edge * edge)
                    })
                    .collect();
                let zc = zt.iter().filter(|(_, b)| b.clamped).count() as u64;
                let qc = qt.iter().filter(|(b, _, _)| b.clamped).count() as u64;
                let both = zc * qc;
                clamp_events +=
                    shape.ns as u64 * (zc * shape.nq as u64 + qc * shape.nz as u64 - both);
                tables.push(ExecTable {
                    rate: problem.ladder.rate(mv.level),
                    target: mv.target,
                    z: zt,
                    q: qt,
                });
            }
            exec.push(tables);
        }
        let times: Vec<f64> = (0..=grid.t_steps).map(|n| grid.time(n)).collect();
        let theta = riccati_reference(&m, &times);
        Ok(Self {
            shape,
            s_vals,
            z_vals,
            q_vals,
            ds: grid.s.step(),
            dz: grid.z.step(),
            dq: grid.q.step(),
            nu_max: grid.nu_max,
            market: m,
            exec,
            theta,
            clamp_events,
        })
    }

    #[inline]
    pub fn local(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape.nz + j) * self.shape.nq + k
    }

    /// Continuous Hamiltonian `κ(s−z) v_z + ½σZ² v_zz + ½σS² v_ss
    /// + sup_ν [ν v_q − ν(s + kν)] − φ q²` on one config's slice.
    ///
    /// The z-drift is upwinded, q-advection uses the one-sided difference in
    /// the direction of ν, and second derivatives vanish on the s/z edges.
    #[inline]
    pub fn continuous(
        &self,
        v: &[f64],
        i: usize,
        j: usize,
        k: usize,
        choice: RateChoice,
    ) -> ContinuousTerm {
        let Shape { ns, nz, nq, .. } = self.shape;
        let m = &self.market;
        let at = self.local(i, j, k);
        let vc = v[at];
        let s = self.s_vals[i];
        let z = self.z_vals[j];
        let q = self.q_vals[k];
        let sq = nz * nq;

        let vss = if i > 0 && i + 1 < ns {
            (v[at + sq] - 2.0 * vc + v[at - sq]) / (self.ds * self.ds)
        } else {
            0.0
        };
        let vzz = if j > 0 && j + 1 < nz {
            (v[at + nq] - 2.0 * vc + v[at - nq]) / (self.dz * self.dz)
        } else {
            0.0
        };
        let b = m.kappa * (s - z);
        let vz = if b > 0.0 && j + 1 < nz {
            (v[at + nq] - vc) / self.dz
        } else if b < 0.0 && j > 0 {
            (vc - v[at - nq]) / self.dz
        } else {
            0.0
        };

        let kimp = m.temp_impact;
        let (sup, nu) = match choice {
            RateChoice::Optimize => {
                let mut best = 0.0;
                let mut nu = 0.0;
                if k + 1 < nq {
                    let p = (v[at + 1] - vc) / self.dq - s;
                    let cand = (p / (2.0 * kimp)).clamp(0.0, self.nu_max);
                    let val = cand * p - kimp * cand * cand;
                    if val > best {
                        best = val;
                        nu = cand;
                    }
                }
                if k > 0 {
                    let p = (vc - v[at - 1]) / self.dq - s;
                    let cand = (p / (2.0 * kimp)).clamp(-self.nu_max, 0.0);
                    let val = cand * p - kimp * cand * cand;
                    if val > best {
                        best = val;
                        nu = cand;
                    }
                }
                (best, nu)
            }
            RateChoice::Fixed(nu) => {
                let nu = nu.clamp(-self.nu_max, self.nu_max);
                let p = if nu > 0.0 && k + 1 < nq {
                    Some((v[at + 1] - vc) / self.dq - s)
                } else if nu < 0.0 && k > 0 {
                    Some((vc - v[at - 1]) / self.dq - s)
                } else {
                    None
                };
                match p {
                    Some(p) => (nu * p - kimp * nu * nu, nu),
                    None => (0.0, 0.0),
                }
            }
        };

        let value =
            b * vz + 0.5 * m.sigma_z * m.sigma_z * vzz + 0.5 * m.sigma_s * m.sigma_s * vss + sup
                - m.running_penalty * q * q;
        ContinuousTerm { value, nu }
    }

    /// Rate-weighted expected change from executions of pending orders:
    /// `Σ_i rate_i (v(Γ(x, vol_i), cfg − level i) − v(x, cfg) + cash_i)`,
    /// reading `full` at time index `n`.
    ///
    /// A post-trade inventory beyond the q axis is valued at the axis edge plus
    /// the no-impulse increment `δ s + θ(t) ((q_e + δ)² − q_e²)`. Clamping
    /// alone would hand out the trade's cash without its inventory.
    #[inline]
    pub fn execution(&self, full: &[f64], n: usize, c: usize, i: usize, j: usize, k: usize) -> f64 {
        let per = self.shape.per_config();
        let here = full[c * per + self.local(i, j, k)];
        let mut total = 0.0;
        for e in &self.exec[c] {
            let (cash, zb) = e.z[j];
            let (qb, over, over_sq) = e.q[k];
            let base = e.target * per;
            let v00 = full[base + self.local(i, zb.lo, qb.lo)];
            let v01 = full[base + self.local(i, zb.lo, qb.lo + 1)];
            let v10 = full[base + self.local(i, zb.lo + 1, qb.lo)];
            let v11 = full[base + self.local(i, zb.lo + 1, qb.lo + 1)];
            let post = (1.0 - zb.w) * ((1.0 - qb.w) * v00 + qb.w * v01)
                + zb.w * ((1.0 - qb.w) * v10 + qb.w * v11);
            let extra = if over != 0.0 {
                over * self.s_vals[i] + self.theta[n] * over_sq
            } else {
                0.0
            };
            total += e.rate * (post + extra - here + cash);
        }
        total
    }
}
