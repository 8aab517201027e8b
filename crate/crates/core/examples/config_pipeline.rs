//! Runs every command of the `pfqvi` binary through the library on one
//! config and lists the files written.
//!
//! `cargo run --release --example config_pipeline [config.toml] [out_dir]`

use pfqvi::commands::{
    cmd_compare, cmd_fees, cmd_regions, cmd_simulate, cmd_solve, cmd_sweep, Context,
};
use pfqvi::config::RunConfig;

fn main() -> pfqvi::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/small.toml").into());
    let mut cfg = RunConfig::load(path.as_ref())?;
    if let Some(out) = args.next() {
        cfg.output = out.into();
    }
    let ctx = Context::new(cfg)?;
    println!("config hash {}", ctx.hash);

    let solved = cmd_solve(&ctx)?;
    println!(
        "solve: v0 = {:.3}, residual max {:?}",
        solved.report.v0, solved.report.residual_max
    );
    let sim = cmd_simulate(&ctx)?;
    println!(
        "simulate: mean J = {:.3}, consistent with v0: {:?}",
        sim.mean, sim.consistent
    );
    let regions = cmd_regions(&ctx)?;
    println!(
        "regions: {} maps, measure trend {:?}",
        regions.maps.len(),
        regions.measure_non_decreasing
    );
    let fees = cmd_fees(&ctx)?;
    println!("fees: {} maps", fees.maps.len());
    let sweep = cmd_sweep(&ctx)?;
    println!("sweep: non-decreasing {}", sweep.non_decreasing);
    let cmp = cmd_compare(&ctx)?;
    println!(
        "compare: ratio {:.3}, optimal better {}",
        cmp.comparison.mc.ratio, cmp.comparison.mc.optimal_better
    );

    let mut files: Vec<_> = std::fs::read_dir(ctx.out_dir())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name())
        .collect();
    files.sort();
    println!("{} files in {}", files.len(), ctx.out_dir().display());
    Ok(())
}
