//! Mixed continuous/impulse control with fee-selected execution delays.
//!
//! An impulse is an order of signed size submitted at one of `N` priority
//! levels. Level `i` costs `fees[i]` and executes at the next event of a
//! Poisson clock with intensity `rates[i]`, so its delay is exponential
//! with mean `1 / rates[i]`. At most `K` orders may be pending at once. The
//! discrete part of the state is the [`PendingConfig`]: per-level order
//! counts and per-level aggregated pending volume.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fee and execution intensity per priority level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorityLadder {
    fees: Vec<f64>,
    rates: Vec<f64>,
}

impl PriorityLadder {
    pub fn new(fees: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        let ladder = Self { fees, rates };
        ladder.validate()?;
        Ok(ladder)
    }

    /// Ladder with `levels` entries whose fees and rates grow by fixed
    /// increments from the first level.
    pub fn arithmetic(
        levels: usize,
        fee0: f64,
        fee_step: f64,
        rate0: f64,
        rate_step: f64,
    ) -> Result<Self> {
        let fees = (0..levels).map(|i| fee0 + fee_step * i as f64).collect();
        let rates = (0..levels).map(|i| rate0 + rate_step * i as f64).collect();
        Self::new(fees, rates)
    }

    /// Default calibration ladder: fees 100, 300, 500, ...; rates 2, 2.5, 3, ...
    pub fn calibrated(levels: usize) -> Result<Self> {
        Self::arithmetic(levels, 100.0, 200.0, 2.0, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fees.is_empty() {
            return Err(Error::InvalidLadder("at least one level required".into()));
        }
        if self.fees.len() != self.rates.len() {
            return Err(Error::InvalidLadder(format!(
                "{} fees but {} rates",
                self.fees.len(),
                self.rates.len()
            )));
        }
        for (i, (&p, &l)) in self.fees.iter().zip(&self.rates).enumerate() {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidLadder(format!(
                    "fee {i} must be positive, got {p}"
                )));
            }
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidLadder(format!(
                    "rate {i} must be positive, got {l}"
                )));
            }
        }
        for w in self.fees.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidLadder(
                    "fees must be strictly increasing".into(),
                ));
            }
        }
        for w in self.rates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidLadder(
                    "rates must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.fees.len()
    }

    pub fn fees(&self) -> &[f64] {
        &self.fees
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn fee(&self, level: usize) -> f64 {
        self.fees[level]
    }

    pub fn rate(&self, level: usize) -> f64 {
        self.rates[level]
    }

    /// First `levels` rungs of this ladder.
    pub fn prefix(&self, levels: usize) -> Result<Self> {
        if levels == 0 || levels > self.levels() {
            return Err(Error::InvalidLadder(format!(
                "prefix of length {levels} from a ladder with {} levels",
                self.levels()
            )));
        }
        Self::new(self.fees[..levels].to_vec(), self.rates[..levels].to_vec())
    }

    /// Same fees, every rate multiplied by `factor`.
    pub fn scale_rates(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.fees.clone(),
            self.rates.iter().map(|r| r * factor).collect(),
        )
    }
}

/// Capacity limits on pending orders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendingLimits {
    /// Maximum number of simultaneously pending orders (K).
    pub max_pending: usize,
    /// Bound on a single order's absolute size.
    pub volume_bound: f64,
    /// Bound on the sum over levels of absolute aggregated pending volume.
    pub pending_cap: f64,
}

impl PendingLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.volume_bound > 0.0) {
            return Err(Error::InvalidVolumeGrid(
                "volume bound must be positive".into(),
            ));
        }
        if !(self.pending_cap > 0.0) {
            return Err(Error::InvalidVolumeGrid(
                "pending cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

const VOLUME_QUANTUM: f64 = 1e-9;

fn volume_key(v: f64) -> i64 {
    (v / VOLUME_QUANTUM).round() as i64
}

/// Pending orders per level and their aggregated signed volume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PendingConfig {
    counts: Vec<u32>,
    volumes: Vec<f64>,
}

impl PartialEq for PendingConfig {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for PendingConfig {}

impl std::hash::Hash for PendingConfig {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl PendingConfig {
    pub fn empty(levels: usize) -> Self {
        Self {
            counts: vec![0; levels],
            volumes: vec![0.0; levels],
        }
    }

    /// Builds a config and checks the structural invariants against `limits`.
    pub fn new(counts: Vec<u32>, volumes: Vec<f64>, limits: &PendingLimits) -> Result<Self> {
        if counts.len() != volumes.len() {
            return Err(Error::InvalidVolumeGrid(
                "counts and volumes differ in length".into(),
            ));
        }
        let cfg = Self { counts, volumes };
        cfg.check(limits)?;
        Ok(cfg)
    }

    pub fn check(&self, limits: &PendingLimits) -> Result<()> {
        if self.total_count() > limits.max_pending {
            return Err(Error::CapacityExceeded {
                max_pending: limits.max_pending,
            });
        }
        for (&c, &v) in self.counts.iter().zip(&self.volumes) {
            if c == 0 && volume_key(v) != 0 {
                return Err(Error::InvalidVolumeGrid(
                    "volume at a level without orders".into(),
                ));
            }
            if v.abs() > c as f64 * limits.volume_bound + VOLUME_QUANTUM {
                return Err(Error::SizeOutOfBounds {
                    size: v,
                    bound: c as f64 * limits.volume_bound,
                });
            }
        }
        let total = self.total_abs_volume();
        if total > limits.pending_cap + VOLUME_QUANTUM {
            return Err(Error::VolumeCapExceeded {
                total,
                cap: limits.pending_cap,
            });
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn total_count(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    pub fn total_abs_volume(&self) -> f64 {
        self.volumes.iter().map(|v| v.abs()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_count() == 0
    }

    /// Zero-pads this config to a ladder with `levels` rungs.
    pub fn embed(&self, levels: usize) -> Self {
        let mut out = Self::empty(levels.max(self.levels()));
        out.counts[..self.levels()].copy_from_slice(&self.counts);
        out.volumes[..self.levels()].copy_from_slice(&self.volumes);
        out
    }

    fn key(&self) -> (Vec<u32>, Vec<i64>) {
        (
            self.counts.clone(),
            self.volumes.iter().map(|&v| volume_key(v)).collect(),
        )
    }

    /// Adds one order of `size` at `level`.
    pub fn after_submit(&self, level: usize, size: f64, limits: &PendingLimits) -> Result<Self> {
        if level >= self.levels() {
            return Err(Error::LevelOutOfRange {
                level,
                levels: self.levels(),
            });
        }
        if self.total_count() >= limits.max_pending {
            return Err(Error::CapacityExceeded {
                max_pending: limits.max_pending,
            });
        }
        if size.abs() > limits.volume_bound + VOLUME_QUANTUM {
            return Err(Error::SizeOutOfBounds {
                size,
                bound: limits.volume_bound,
            });
        }
        let total = self.total_abs_volume() + size.abs();
        if total > limits.pending_cap + VOLUME_QUANTUM {
            return Err(Error::VolumeCapExceeded {
                total,
                cap: limits.pending_cap,
            });
        }
        let mut out = self.clone();
        out.counts[level] += 1;
        out.volumes[level] += size;
        if volume_key(out.volumes[level]) == 0 {
            out.volumes[level] = 0.0;
        }
        Ok(out)
    }

    /// Executes every order pending at `level` as one aggregate trade.
    /// Returns the cleared config and the executed signed volume.
    pub fn after_execute(&self, level: usize) -> Result<(Self, f64)> {
        if level >= self.levels() {
            return Err(Error::LevelOutOfRange {
                level,
                levels: self.levels(),
            });
        }
        if self.counts[level] == 0 {
            return Err(Error::NoPendingAtLevel(level));
        }
        let mut out = self.clone();
        let executed = out.volumes[level];
        out.counts[level] = 0;
        out.volumes[level] = 0.0;
        Ok((out, executed))
    }
}

/// Free-function form of [`PendingConfig::after_submit`].
pub fn config_after_submit(
    cfg: &PendingConfig,
    level: usize,
    size: f64,
    limits: &PendingLimits,
) -> Result<PendingConfig> {
    cfg.after_submit(level, size, limits)
}

/// Free-function form of [`PendingConfig::after_execute`].
pub fn config_after_execute(cfg: &PendingConfig, level: usize) -> Result<(PendingConfig, f64)> {
    cfg.after_execute(level)
}

fn validate_volume_grid(grid: &[f64], limits: &PendingLimits) -> Result<()> {
    if grid.is_empty() {
        if limits.max_pending >= 1 {
            return Err(Error::InvalidVolumeGrid(
                "empty volume grid with K >= 1".into(),
            ));
        }
        return Ok(());
    }
    for w in grid.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidVolumeGrid(
                "volume grid must be sorted and distinct".into(),
            ));
        }
    }
    for &v in grid {
        if !v.is_finite() || volume_key(v) == 0 {
            return Err(Error::InvalidVolumeGrid(
                "volume grid must be finite and exclude 0".into(),
            ));
        }
        if v.abs() > limits.volume_bound + VOLUME_QUANTUM {
            return Err(Error::InvalidVolumeGrid(format!(
                "size {v} exceeds the volume bound {}",
                limits.volume_bound
            )));
        }
        if !grid.iter().any(|&w| volume_key(w + v) == 0) {
            return Err(Error::InvalidVolumeGrid(format!(
                "grid is not symmetric: {v} has no mirror"
            )));
        }
    }
    Ok(())
}

/// Every config reachable from the empty config by admissible submissions,
/// deduplicated, empty config first, then by order count.
pub fn enumerate_configs(
    ladder: &PriorityLadder,
    limits: &PendingLimits,
    volume_grid: &[f64],
) -> Result<Vec<PendingConfig>> {
    limits.validate()?;
    validate_volume_grid(volume_grid, limits)?;
    let levels = ladder.levels();
    let empty = PendingConfig::empty(levels);
    let mut seen: BTreeSet<(usize, Vec<u32>, Vec<i64>)> = BTreeSet::new();
    let mut found = Vec::new();
    let mut queue = VecDeque::from([empty]);
    while let Some(cfg) = queue.pop_front() {
        let (c, v) = cfg.key();
        if !seen.insert((cfg.total_count(), c, v)) {
            continue;
        }
        if cfg.total_count() < limits.max_pending {
            for level in 0..levels {
                for &size in volume_grid {
                    if let Ok(next) = cfg.after_submit(level, size, limits) {
                        queue.push_back(next);
                    }
                }
            }
        }
        found.push(cfg);
    }
    found.sort_by(|a, b| {
        let (ac, av) = a.key();
        let (bc, bv) = b.key();
        (a.total_count(), ac, av).cmp(&(b.total_count(), bc, bv))
    });
    Ok(found)
}

/// One admissible submission out of a config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubmitMove {
    pub level: usize,
    pub size_index: usize,
    pub size: f64,
    pub target: usize,
}

/// One possible execution out of a config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecuteMove {
    pub level: usize,
    pub volume: f64,
    pub target: usize,
}

/// Enumerated configuration space with precomputed transitions.
///
/// Submit moves for each config are listed in tie-break order: lowest level,
/// then smallest |size|, then the sell before the buy.
#[derive(Debug, Clone)]
pub struct ConfigSpace {
    configs: Vec<PendingConfig>,
    index: HashMap<PendingConfig, usize>,
    sizes: Vec<f64>,
    submits: Vec<Vec<SubmitMove>>,
    executes: Vec<Vec<ExecuteMove>>,
    limits: PendingLimits,
    levels: usize,
}

impl ConfigSpace {
    pub fn new(
        ladder: &PriorityLadder,
        limits: PendingLimits,
        volume_grid: &[f64],
    ) -> Result<Self> {
        let configs = enumerate_configs(ladder, &limits, volume_grid)?;
        let index: HashMap<PendingConfig, usize> = configs
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, c)| (c, i))
            .collect();
        let mut sizes = volume_grid.to_vec();
        sizes.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        let levels = ladder.levels();
        let mut submits = Vec::with_capacity(configs.len());
        let mut executes = Vec::with_capacity(configs.len());
        for cfg in &configs {
            let mut moves = Vec::new();
            if cfg.total_count() < limits.max_pending {
                for level in 0..levels {
                    for (size_index, &size) in sizes.iter().enumerate() {
                        if let Ok(next) = cfg.after_submit(level, size, &limits) {
                            let target = *index.get(&next).ok_or(Error::UnknownConfig)?;
                            moves.push(SubmitMove {
                                level,
                                size_index,
                                size,
                                target,
                            });
                        }
                    }
                }
            }
            submits.push(moves);
            let mut ex = Vec::new();
            for level in 0..levels {
                if cfg.counts()[level] > 0 {
                    let (next, volume) = cfg.after_execute(level)?;
                    let target = *index.get(&next).ok_or(Error::UnknownConfig)?;
                    ex.push(ExecuteMove {
                        level,
                        volume,
                        target,
                    });
                }
            }
            executes.push(ex);
        }
        Ok(Self {
            configs,
            index,
            sizes,
            submits,
            executes,
            limits,
            levels,
        })
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn limits(&self) -> &PendingLimits {
        &self.limits
    }

    pub fn configs(&self) -> &[PendingConfig] {
        &self.configs
    }

    pub fn config(&self, i: usize) -> &PendingConfig {
        &self.configs[i]
    }

    pub fn index_of(&self, cfg: &PendingConfig) -> Option<usize> {
        self.index.get(cfg).copied()
    }

    /// Index of the empty config (always 0).
    pub fn empty_index(&self) -> usize {
        0
    }

    /// Volume grid in tie-break order.
    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn submits(&self, cfg: usize) -> &[SubmitMove] {
        &self.submits[cfg]
    }

    pub fn executes(&self, cfg: usize) -> &[ExecuteMove] {
        &self.executes[cfg]
    }

    /// True when one more order may still be submitted from `cfg`.
    pub fn can_submit(&self, cfg: usize) -> bool {
        self.configs[cfg].total_count() < self.limits.max_pending
    }
}

/// Abstract mixed-control problem with delayed impulses.
///
/// All callbacks are deterministic functions of their arguments. The
/// continuous control `a` is scalar. `cashflow` is the amount added to
/// wealth when an order of size `xi` at `level` executes.
pub trait ControlProblem {
    fn state_dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn ladder(&self) -> &PriorityLadder;
    fn limits(&self) -> &PendingLimits;
    fn drift(&self, t: f64, x: &[f64], a: f64) -> Vec<f64>;
    /// Diffusion matrix, row-major `state_dim x noise_dim`.
    fn diffusion(&self, t: f64, x: &[f64], a: f64) -> Vec<Vec<f64>>;
    fn impulse(&self, t: f64, x: &[f64], xi: f64) -> Result<Vec<f64>>;
    fn running_reward(&self, t: f64, x: &[f64], a: f64) -> f64;
    fn terminal_reward(&self, x: &[f64]) -> f64;
    fn cashflow(&self, t: f64, x: &[f64], xi: f64, level: usize) -> Result<f64>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn limits(k: usize) -> PendingLimits {
        PendingLimits {
            max_pending: k,
            volume_bound: 10.0,
            pending_cap: 100.0,
        }
    }

    #[test]
    fn ladder_rejects_bad_orderings() {
        assert!(PriorityLadder::new(vec![], vec![]).is_err());
        assert!(PriorityLadder::new(vec![1.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(PriorityLadder::new(vec![1.0, 2.0], vec![2.0, 1.0]).is_err());
        assert!(PriorityLadder::new(vec![0.0], vec![1.0]).is_err());
        assert!(PriorityLadder::new(vec![1.0], vec![-1.0]).is_err());
        let l = PriorityLadder::calibrated(3).unwrap();
        assert_eq!(l.fees(), &[100.0, 300.0, 500.0]);
        assert_eq!(l.rates(), &[2.0, 2.5, 3.0]);
    }

    #[test]
    fn enumerate_with_no_capacity_gives_only_empty() {
        let ladder = PriorityLadder::calibrated(3).unwrap();
        let cfgs = enumerate_configs(&ladder, &limits(0), &[-1.0, 1.0]).unwrap();
        assert_eq!(cfgs.len(), 1);
        assert_eq!(cfgs[0].counts(), &[0, 0, 0]);
        assert_eq!(cfgs[0].volumes(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn enumerate_two_levels_one_order() {
        let ladder = PriorityLadder::calibrated(2).unwrap();
        let cfgs = enumerate_configs(&ladder, &limits(1), &[-1.0, 1.0]).unwrap();
        assert_eq!(cfgs.len(), 5);
        assert!(cfgs[0].is_empty());
    }

    #[test]
    fn enumerate_one_level_two_orders_dedups_aggregates() {
        let ladder = PriorityLadder::calibrated(1).unwrap();
        let cfgs = enumerate_configs(&ladder, &limits(2), &[-1.0, 1.0]).unwrap();
        assert_eq!(cfgs.len(), 6);
        let mut two: Vec<f64> = cfgs
            .iter()
            .filter(|c| c.counts()[0] == 2)
            .map(|c| c.volumes()[0])
            .collect();
        two.sort_by(f64::total_cmp);
        assert_eq!(two, vec![-2.0, 0.0, 2.0]);
    }

    #[test]
    fn enumerate_rejects_bad_grids() {
        let ladder = PriorityLadder::calibrated(1).unwrap();
        assert!(matches!(
            enumerate_configs(&ladder, &limits(1), &[]),
            Err(Error::InvalidVolumeGrid(_))
        ));
        assert!(enumerate_configs(&ladder, &limits(0), &[]).is_ok());
        assert!(enumerate_configs(&ladder, &limits(1), &[-20.0, 20.0]).is_err());
        assert!(enumerate_configs(&ladder, &limits(1), &[-1.0, 2.0]).is_err());
        assert!(enumerate_configs(&ladder, &limits(1), &[-1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn submit_examples() {
        let lim = limits(2);
        let empty = PendingConfig::empty(2);
        let a = config_after_submit(&empty, 0, 1.0, &lim).unwrap();
        assert_eq!(a.counts(), &[1, 0]);
        assert_eq!(a.volumes(), &[1.0, 0.0]);
        let b = config_after_submit(&a, 0, -1.0, &lim).unwrap();
        assert_eq!(b.counts(), &[2, 0]);
        assert_eq!(b.volumes(), &[0.0, 0.0]);
        assert!(matches!(
            config_after_submit(&b, 1, 1.0, &lim),
            Err(Error::CapacityExceeded { max_pending: 2 })
        ));
        let tight = PendingLimits {
            max_pending: 3,
            volume_bound: 10.0,
            pending_cap: 1.5,
        };
        assert!(matches!(
            config_after_submit(&a, 1, 1.0, &tight),
            Err(Error::VolumeCapExceeded { .. })
        ));
    }

    #[test]
    fn execute_examples() {
        let lim = PendingLimits {
            max_pending: 2,
            volume_bound: 3.0,
            pending_cap: 10.0,
        };
        let cfg = PendingConfig::new(vec![2, 0], vec![3.0, 0.0], &lim).unwrap();
        let (after, vol) = config_after_execute(&cfg, 0).unwrap();
        assert!(after.is_empty());
        assert_eq!(vol, 3.0);

        let cfg = PendingConfig::new(vec![1, 1], vec![1.0, -1.0], &lim).unwrap();
        let (after, vol) = config_after_execute(&cfg, 1).unwrap();
        assert_eq!(after.counts(), &[1, 0]);
        assert_eq!(after.volumes(), &[1.0, 0.0]);
        assert_eq!(vol, -1.0);

        let empty = PendingConfig::empty(2);
        assert_eq!(
            config_after_execute(&empty, 0),
            Err(Error::NoPendingAtLevel(0))
        );
    }

    #[test]
    fn submit_moves_follow_tie_break_order() {
        let ladder = PriorityLadder::calibrated(2).unwrap();
        let space = ConfigSpace::new(&ladder, limits(1), &[-2.0, -1.0, 1.0, 2.0]).unwrap();
        let moves: Vec<(usize, f64)> = space.submits(0).iter().map(|m| (m.level, m.size)).collect();
        assert_eq!(
            moves,
            vec![
                (0, -1.0),
                (0, 1.0),
                (0, -2.0),
                (0, 2.0),
                (1, -1.0),
                (1, 1.0),
                (1, -2.0),
                (1, 2.0)
            ]
        );
        for m in space.submits(0) {
            assert_eq!(space.executes(m.target).len(), 1);
            assert_eq!(space.executes(m.target)[0].target, 0);
        }
        assert!(space.submits(1).is_empty());
    }

    fn grid_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::btree_set(1u32..=8, 1..4).prop_map(|s| {
            let mut g: Vec<f64> = s
                .iter()
                .flat_map(|&v| [v as f64 * 0.5, -(v as f64) * 0.5])
                .collect();
            g.sort_by(f64::total_cmp);
            g
        })
    }

    proptest! {
        #[test]
        fn closure_and_invariants(levels in 1usize..=3, k in 0usize..=2, grid in grid_strategy(), cap in 1.0f64..8.0) {
            let ladder = PriorityLadder::calibrated(levels).unwrap();
            let lim = PendingLimits { max_pending: k, volume_bound: 4.0, pending_cap: cap };
            let space = ConfigSpace::new(&ladder, lim, &grid).unwrap();
            for (i, cfg) in space.configs().iter().enumerate() {
                cfg.check(&lim).unwrap();
                prop_assert!(cfg.total_count() <= k);
                for level in 0..levels {
                    for &size in &grid {
                        if let Ok(next) = cfg.after_submit(level, size, &lim) {
                            prop_assert!(space.index_of(&next).is_some());
                        }
                    }
                    if let Ok((next, _)) = cfg.after_execute(level) {
                        prop_assert!(space.index_of(&next).is_some());
                    }
                }
                prop_assert_eq!(space.index_of(cfg), Some(i));
            }
        }

        #[test]
        fn prefix_ladder_nests(k in 0usize..=2, grid in grid_strategy()) {
            let lim = PendingLimits { max_pending: k, volume_bound: 4.0, pending_cap: 6.0 };
            let big = ConfigSpace::new(&PriorityLadder::calibrated(3).unwrap(), lim, &grid).unwrap();
            let small = enumerate_configs(&PriorityLadder::calibrated(2).unwrap(), &lim, &grid).unwrap();
            for cfg in &small {
                prop_assert!(big.index_of(&cfg.embed(3)).is_some());
            }
        }

        #[test]
        fn submit_then_execute_on_empty_level_roundtrips(level in 0usize..3, size in -4.0f64..4.0) {
            prop_assume!(size.abs() > 1e-6);
            let lim = PendingLimits { max_pending: 3, volume_bound: 4.0, pending_cap: 20.0 };
            let base = PendingConfig::new(vec![0, 1, 0], vec![0.0, 2.0, 0.0], &lim).unwrap();
            prop_assume!(base.counts()[level] == 0);
            let (back, vol) = base.after_submit(level, size, &lim).unwrap().after_execute(level).unwrap();
            prop_assert_eq!(back, base);
            prop_assert!((vol - size).abs() < 1e-12);
        }
    }
}
