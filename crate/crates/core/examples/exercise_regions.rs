//! Solves a config and prints the exercise region of the empty book at each
//! configured (t, q): `.` waits, `a b c ..` buy at fee level 0, 1, 2, ...,
//! upper case sells. Rows run over s (top = high), columns over z.
//!
//! `cargo run --release --example exercise_regions [config.toml]`

use pfqvi::config::RunConfig;
use pfqvi::policy_tools::{extract_region, CellLabel, FeeMap};
use pfqvi::solver::solve;

fn main() -> pfqvi::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/small.toml").into());
    let cfg = RunConfig::load(path.as_ref())?;
    let problem = cfg.problem()?;
    let grid = cfg.grid_spec(&problem)?;
    let sol = solve(&problem, &grid, &cfg.solve_options())?;

    for &q in &cfg.maps.inventories {
        for &t in &cfg.maps.times {
            let region = extract_region(&sol.policy, &grid, t, q)?;
            let st = region.stats();
            println!(
                "t = {t}, q = {q}: exercise share {:.3}, diagonal waits: {}, buys {}, sells {}",
                st.exercise_measure, st.diagonal_continues, st.buys, st.sells
            );
            if region.s.len() <= 41 {
                for i in (0..region.s.len()).rev() {
                    let row: String = (0..region.z.len())
                        .map(|j| match region.label(i, j) {
                            CellLabel::Continue => '.',
                            CellLabel::Exercise { level, size } => {
                                let c = (b'a' + level as u8) as char;
                                if size < 0.0 {
                                    c.to_ascii_uppercase()
                                } else {
                                    c
                                }
                            }
                        })
                        .collect();
                    println!("  {row}");
                }
            }
            let fees = FeeMap::from_region(&region, grid.space.levels());
            if let Some(rho) = fees.dislocation_correlation() {
                println!("  rank correlation of |s - z| and fee level: {rho:.3}");
            }
            println!();
        }
    }
    Ok(())
}
