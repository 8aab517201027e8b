//! The `pfqvi` subcommands as library calls.
//!
//! Every command takes a validated [`RunConfig`], writes into
//! `config.output` and records its files in `manifest.json`. JSON and CSV
//! outputs never contain timings, paths or the thread count, so reruns
//! with the same config produce the same bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::{self, Manifest, FORMAT_VERSION, POLICY_FILE, VALUE_FILE};
use crate::cexdex::CexDexProblem;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::policy_tools::{
    artifact_stem, extract_region, nu_sensitivity, smooth_fit_diagnostic, value_norm_sweep,
    write_fee_csv, write_fee_png, write_region_csv, write_region_png, FeeMap, RegionStats,
    SmoothFitStats, SweepRow,
};
use crate::sim::{
    compare_policies, delay_windows_by_level, ks_censored_exponential, mean_se,
    random_fee_baseline, simulate_many, write_records_jsonl, ComparisonReport, KsTest, NoImpulse,
    Policy, PolicySource, Quantiles, TablePolicy,
};
use crate::solver::{
    obstacle_check, scheme_tolerance, solve, terminal_slice, ObstacleStats, PolicyTables,
    SolveDiagnostics, ValueField,
};

/// Resolved inputs shared by every command.
pub struct Context {
    pub config: RunConfig,
    pub problem: CexDexProblem,
    pub grid: GridSpec,
    pub hash: String,
}

impl Context {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let problem = config.problem()?;
        let grid = config.grid_spec(&problem)?;
        let hash = config.problem_hash();
        Ok(Self {
            config,
            problem,
            grid,
            hash,
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.output
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(self.out_dir())?;
        Ok(())
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir().join(name)
    }

    /// Config as stored in the manifest: no thread count, no output path.
    pub fn normalized_config(&self) -> serde_json::Value {
        let mut c = self.config.clone();
        c.threads = None;
        c.output = PathBuf::new();
        serde_json::to_value(&c).unwrap_or(serde_json::Value::Null)
    }

    fn record(&self, command: &str, files: &[PathBuf]) -> Result<()> {
        Manifest::record(
            self.out_dir(),
            &self.hash,
            self.normalized_config(),
            command,
            files,
        )
    }

    pub fn load_value(&self) -> Result<ValueField> {
        artifact::read_value(&self.out(VALUE_FILE), &self.hash)
    }

    pub fn load_policy(&self) -> Result<PolicyTables> {
        let p = artifact::read_policy(&self.out(POLICY_FILE), &self.hash)?;
        if p.shape.len() != self.grid.slice_len() || p.t_steps != self.grid.t_steps {
            return Err(Error::Artifact(
                "policy shape does not match the configured grid".into(),
            ));
        }
        Ok(p)
    }

    fn initial_node(&self, q: f64) -> (usize, usize, usize) {
        let m = &self.problem.market;
        (
            self.grid.s.nearest(m.s0),
            self.grid.z.nearest(m.z0),
            self.grid.q.nearest(q),
        )
    }

    /// Runs `f` on a pool of `config.threads` workers, or the global pool.
    pub fn in_pool<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        match self.config.threads {
            None => f(),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config {
                    key: "threads".into(),
                    reason: e.to_string(),
                })?
                .install(f),
        }
    }
}

fn write_csv_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Artifact(e.to_string()))?;
    w.write_record(header)
        .map_err(|e| Error::Artifact(e.to_string()))?;
    for r in rows {
        w.write_record(r)
            .map_err(|e| Error::Artifact(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub s_points: usize,
    pub z_points: usize,
    pub q_points: usize,
    pub configs: usize,
    pub t_steps: usize,
    pub dt: f64,
    pub stability_bound: f64,
    pub s_range: (f64, f64),
    pub q_range: (f64, f64),
}

impl GridSummary {
    fn of(grid: &GridSpec, problem: &CexDexProblem) -> Self {
        Self {
            s_points: grid.s.count,
            z_points: grid.z.count,
            q_points: grid.q.count,
            configs: grid.space.len(),
            t_steps: grid.t_steps,
            dt: grid.dt(),
            stability_bound: grid.stability_bound(problem),
            s_range: (grid.s.min, grid.s.max),
            q_range: (grid.q.min, grid.q.max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub format_version: u32,
    pub config_hash: String,
    pub grid: GridSummary,
    /// `v(0, s0, z0, 0, empty)`.
    pub v0: f64,
    pub diagnostics: SolveDiagnostics,
    pub scheme_tolerance: f64,
    pub residual_max: Option<f64>,
    pub residual_within_tolerance: Option<bool>,
    pub obstacle: ObstacleStats,
    pub obstacle_fraction: f64,
    /// `max |v(T) - g|`.
    pub terminal_max_error: f64,
    /// Smooth-fit diagnostic at t = 0.
    pub smooth_fit: Option<SmoothFitStats>,
    /// ν range across s over its range across q, at t = 0.
    pub nu_sensitivity: Option<f64>,
}

pub struct SolveOutput {
    pub report: SolveReport,
    pub value: ValueField,
    pub policy: PolicyTables,
}

/// Solves the QVI and writes `value.bin`, `policy.bin` and `report.json`.
pub fn cmd_solve(ctx: &Context) -> Result<SolveOutput> {
    ctx.ensure_out()?;
    let sol = solve(&ctx.problem, &ctx.grid, &ctx.config.solve_options())?;
    let grid = &ctx.grid;
    let (i0, j0, k0) = ctx.initial_node(0.0);
    let v0 = sol.value.get(0, i0, j0, k0, grid.space.empty_index())?;

    let scale = sol
        .value
        .slice(0)?
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = scheme_tolerance(grid, scale);
    let residual_max = sol
        .diagnostics
        .residuals
        .iter()
        .map(|r| r.1.max)
        .reduce(f64::max);
    let obstacle = obstacle_check(&sol.value, grid)?;
    let terminal = terminal_slice(&ctx.problem, grid);
    let terminal_max_error = sol
        .value
        .slice(grid.t_steps)?
        .iter()
        .zip(&terminal)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let smooth_fit = if grid.t_steps > 0 && grid.space.len() > 1 {
        Some(smooth_fit_diagnostic(&sol.value, &sol.policy, grid, 0)?)
    } else {
        None
    };

    let report = SolveReport {
        format_version: FORMAT_VERSION,
        config_hash: ctx.hash.clone(),
        grid: GridSummary::of(grid, &ctx.problem),
        v0,
        diagnostics: sol.diagnostics.clone(),
        scheme_tolerance: tol,
        residual_max,
        residual_within_tolerance: residual_max.map(|m| m <= tol),
        obstacle,
        obstacle_fraction: obstacle.fraction_ok(),
        terminal_max_error,
        smooth_fit,
        nu_sensitivity: nu_sensitivity(&sol.policy, grid, 0, ctx.problem.market.z0),
    };
    let files = [
        ctx.out(VALUE_FILE),
        ctx.out(POLICY_FILE),
        ctx.out("report.json"),
    ];
    artifact::write_value(&sol.value, &ctx.hash, &files[0])?;
    artifact::write_policy(&sol.policy, &ctx.hash, &files[1])?;
    artifact::write_json(&files[2], &report)?;
    ctx.record("solve", &files)?;
    log::info!("solve: v0 = {v0:.4}, {} steps", grid.t_steps);
    Ok(SolveOutput {
        report,
        value: sol.value,
        policy: sol.policy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDelays {
    pub level: usize,
    pub rate: f64,
    pub executed: usize,
    /// Against Exponential(rate), conditioned on filling before the horizon.
    pub ks: Option<KsTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub format_version: u32,
    pub config_hash: String,
    pub policy: PolicySource,
    pub seed: u64,
    pub paths: usize,
    pub steps: usize,
    pub dt: f64,
    pub mean: f64,
    pub std_error: Option<f64>,
    pub objective: Quantiles,
    pub escapes: usize,
    /// Value of the solve at the initial state, for the optimal policy.
    pub pde_v0: Option<f64>,
    /// `max(2% |v|, 3 SE)`.
    pub tolerance: Option<f64>,
    pub consistent: Option<bool>,
    pub delays: Vec<LevelDelays>,
}

/// Simulates `sim.paths` paths of the configured policy and writes
/// `sim_records.jsonl` and `sim_report.json`.
pub fn cmd_simulate(ctx: &Context) -> Result<SimReport> {
    let tables = ctx.load_policy()?;
    let value = ctx.load_value()?;
    ctx.ensure_out()?;
    let sim = &ctx.config.sim;
    let plan = sim.plan(&ctx.problem, Some(ctx.grid.dt()))?;
    let table = TablePolicy::new(&ctx.grid, &tables)?;
    let policy: Box<dyn Policy + '_> = match sim.policy {
        PolicySource::Optimal => Box::new(table),
        PolicySource::RandomFee => Box::new(random_fee_baseline(table, &ctx.grid.space)),
        PolicySource::NoImpulse => Box::new(NoImpulse(table)),
    };
    let records = ctx.in_pool(|| {
        simulate_many(
            policy.as_ref(),
            &ctx.problem,
            &ctx.grid.space,
            &plan,
            sim.paths,
        )
    })?;

    let objectives: Vec<f64> = records.iter().map(|r| r.objective).collect();
    let (mean, std_error) = mean_se(&objectives);
    let pde_v0 = if sim.policy == PolicySource::Optimal {
        let (i, j, k) = ctx.initial_node(sim.q0);
        Some(value.get(0, i, j, k, ctx.grid.space.empty_index())?)
    } else {
        None
    };
    let tolerance = pde_v0.map(|v| (0.02 * v.abs()).max(3.0 * std_error.unwrap_or(0.0)));
    let consistent = pde_v0
        .zip(tolerance)
        .map(|(v, tol)| (mean - v).abs() <= tol);
    let rates = ctx.problem.ladder.rates();
    let delays = delay_windows_by_level(&records, rates.len(), plan.horizon)
        .into_iter()
        .enumerate()
        .map(|(level, d)| LevelDelays {
            level,
            rate: rates[level],
            executed: d.len(),
            ks: ks_censored_exponential(&d, rates[level]),
        })
        .collect();
    let report = SimReport {
        format_version: FORMAT_VERSION,
        config_hash: ctx.hash.clone(),
        policy: sim.policy,
        seed: sim.seed,
        paths: sim.paths,
        steps: plan.steps,
        dt: plan.dt,
        mean,
        std_error,
        objective: Quantiles::of(&objectives),
        escapes: records.iter().map(|r| r.escapes).sum(),
        pde_v0,
        tolerance,
        consistent,
        delays,
    };
    let files = [ctx.out("sim_records.jsonl"), ctx.out("sim_report.json")];
    write_records_jsonl(&records, BufWriter::new(File::create(&files[0])?))?;
    artifact::write_json(&files[1], &report)?;
    ctx.record("simulate", &files)?;
    log::info!("simulate: mean J = {mean:.4} over {} paths", sim.paths);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub t: f64,
    pub q: f64,
    pub csv: String,
    pub png: String,
    pub stats: RegionStats,
    /// `Some(true)` if every exercise cell sells.
    pub one_sided_sell: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsReport {
    pub format_version: u32,
    pub config_hash: String,
    pub maps: Vec<RegionEntry>,
    /// Per inventory: exercise measure does not drop as t increases.
    pub measure_non_decreasing: BTreeMap<String, bool>,
}

fn map_points(ctx: &Context) -> Vec<(f64, f64)> {
    let m = &ctx.config.maps;
    m.inventories
        .iter()
        .flat_map(|&q| m.times.iter().map(move |&t| (t, q)))
        .collect()
}

/// Writes exercise-region CSV and PNG maps for every configured (t, q).
pub fn cmd_regions(ctx: &Context) -> Result<RegionsReport> {
    let tables = ctx.load_policy()?;
    ctx.ensure_out()?;
    let levels = ctx.grid.space.levels();
    let mut maps = Vec::new();
    let mut files = Vec::new();
    for (t, q) in map_points(ctx) {
        let region = extract_region(&tables, &ctx.grid, t, q)?;
        let stem = artifact_stem("regions", region.t, region.q, levels, &ctx.hash);
        let (csv, png) = (
            ctx.out(&format!("{stem}.csv")),
            ctx.out(&format!("{stem}.png")),
        );
        write_region_csv(&region, &csv)?;
        write_region_png(&region, levels, &png)?;
        files.push(csv);
        files.push(png);
        let stats = region.stats();
        log::info!(
            "regions t={t} q={q}: measure {:.3}, diagonal continues {}, buys {}, sells {}",
            stats.exercise_measure,
            stats.diagonal_continues,
            stats.buys,
            stats.sells
        );
        maps.push(RegionEntry {
            t: region.t,
            q: region.q,
            csv: format!("{stem}.csv"),
            png: format!("{stem}.png"),
            stats,
            one_sided_sell: region.one_sided_sell(),
        });
    }
    let mut measure_non_decreasing = BTreeMap::new();
    for &q in &ctx.config.maps.inventories {
        let mut row: Vec<&RegionEntry> = maps.iter().filter(|m| (m.q - q).abs() < 1e-9).collect();
        row.sort_by(|a, b| a.t.total_cmp(&b.t));
        let ok = row
            .windows(2)
            .all(|w| w[1].stats.exercise_measure >= w[0].stats.exercise_measure);
        measure_non_decreasing.insert(format!("{q}"), ok);
    }
    let report = RegionsReport {
        format_version: FORMAT_VERSION,
        config_hash: ctx.hash.clone(),
        maps,
        measure_non_decreasing,
    };
    let path = ctx.out("regions_report.json");
    artifact::write_json(&path, &report)?;
    files.push(path);
    ctx.record("regions", &files)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeEntry {
    pub t: f64,
    pub q: f64,
    pub csv: String,
    pub png: String,
    /// Exercise cells per fee level.
    pub level_counts: Vec<usize>,
    /// Spearman correlation of |s - z| and the chosen level.
    pub dislocation_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeesReport {
    pub format_version: u32,
    pub config_hash: String,
    pub levels: usize,
    pub rates: Vec<f64>,
    pub maps: Vec<FeeEntry>,
}

/// Writes chosen-fee-level CSV and PNG maps for every configured (t, q).
pub fn cmd_fees(ctx: &Context) -> Result<FeesReport> {
    let tables = ctx.load_policy()?;
    ctx.ensure_out()?;
    let levels = ctx.grid.space.levels();
    let mut maps = Vec::new();
    let mut files = Vec::new();
    for (t, q) in map_points(ctx) {
        let region = extract_region(&tables, &ctx.grid, t, q)?;
        let fees = FeeMap::from_region(&region, levels);
        let stem = artifact_stem("fees", region.t, region.q, levels, &ctx.hash);
        let (csv, png) = (
            ctx.out(&format!("{stem}.csv")),
            ctx.out(&format!("{stem}.png")),
        );
        write_fee_csv(&fees, &csv)?;
        write_fee_png(&fees, &png)?;
        files.push(csv);
        files.push(png);
        maps.push(FeeEntry {
            t: region.t,
            q: region.q,
            csv: format!("{stem}.csv"),
            png: format!("{stem}.png"),
            level_counts: (0..levels).map(|l| fees.level_count(l)).collect(),
            dislocation_correlation: fees.dislocation_correlation(),
        });
    }
    let report = FeesReport {
        format_version: FORMAT_VERSION,
        config_hash: ctx.hash.clone(),
        levels,
        rates: ctx.problem.ladder.rates().to_vec(),
        maps,
    };
    let path = ctx.out("fees_report.json");
    artifact::write_json(&path, &report)?;
    files.push(path);
    ctx.record("fees", &files)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub format_version: u32,
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
    pub non_decreasing: bool,
}

/// Value norms for nested prefixes of the ladder; writes `sweep.json` and
/// `sweep.csv`.
pub fn cmd_sweep(ctx: &Context) -> Result<SweepReport> {
    ctx.ensure_out()?;
    let sizes = &ctx.config.sweep.levels;
    let rows = value_norm_sweep(&ctx.problem, &ctx.grid, sizes, ctx.config.threads)?;
    let report = SweepReport {
        format_version: FORMAT_VERSION,
        config_hash: ctx.hash.clone(),
        non_decreasing: rows.windows(2).all(|w| w[1].norm >= w[0].norm),
        rows,
    };
    let files = [ctx.out("sweep.json"), ctx.out("sweep.csv")];
    artifact::write_json(&files[0], &report)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.levels.to_string(),
                r.norm.to_string(),
                r.relative_increment.to_string(),
            ]
        })
        .collect();
    write_csv_rows(&files[1], &["levels", "norm", "relative_increment"], &rows)?;
    ctx.record("sweep", &files)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub comparison: ComparisonReport,
}

/// Optimal against random-fee policy; writes `compare.json` and
/// `compare.csv`.
pub fn cmd_compare(ctx: &Context) -> Result<CompareReport> {
    let tables = ctx.load_policy()?;
    ctx.ensure_out()?;
    let cfg = &ctx.config;
    let comparison = ctx.in_pool(|| {
        compare_policies(
            &ctx.problem,
            &ctx.grid,
            &tables,
            &cfg.sim,
            cfg.compare.pde,
            cfg.threads,
        )
    })?;
    let report = CompareReport {
        format_version: FORMAT_VERSION,
        config_hash: ctx.hash.clone(),
        seed: cfg.sim.seed,
        comparison,
    };
    let files = [ctx.out("compare.json"), ctx.out("compare.csv")];
    artifact::write_json(&files[0], &report)?;
    let mc = &report.comparison.mc;
    let mut rows = vec![
        ("paths", mc.paths as f64),
        ("optimal_mean", mc.optimal_mean),
        ("random_mean", mc.random_mean),
        ("diff_mean", mc.diff_mean),
        ("diff_ci_low", mc.diff_ci95.0),
        ("diff_ci_high", mc.diff_ci95.1),
        ("p_value", mc.p_value),
        ("ratio", mc.ratio),
        ("ratio_ci_low", mc.ratio_ci95.0),
        ("ratio_ci_high", mc.ratio_ci95.1),
    ];
    if let Some(pde) = &report.comparison.pde {
        rows.push(("pde_optimal_norm", pde.optimal_norm));
        rows.push(("pde_random_norm", pde.random_norm));
        rows.push(("pde_norm_ratio", pde.norm_ratio));
    }
    let rows: Vec<Vec<String>> = rows
        .into_iter()
        .map(|(k, v)| vec![k.to_string(), v.to_string()])
        .collect();
    write_csv_rows(&files[1], &["metric", "value"], &rows)?;
    ctx.record("compare", &files)?;
    Ok(report)
}

/// The default config as TOML.
pub fn cmd_defaults<W: Write>(mut out: W) -> Result<()> {
    out.write_all(RunConfig::default().to_toml()?.as_bytes())?;
    Ok(())
}

/// Machine-readable error, printed to stderr by the binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub exit_code: i32,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        Self {
            error: e.kind().to_string(),
            message: e.to_string(),
            key: match e {
                Error::Config { key, .. } => Some(key.clone()),
                _ => None,
            },
            exit_code: e.exit_code(),
        }
    }
}
