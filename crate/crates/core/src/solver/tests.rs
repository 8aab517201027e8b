use super::*;
use crate::cexdex::MarketParams;
use crate::control::{PendingLimits, PriorityLadder};
use crate::grid::{symmetric_volume_grid, Axis};
use proptest::prelude::*;

fn problem(levels: usize, k: usize) -> CexDexProblem {
    CexDexProblem::new(
        MarketParams::default(),
        PriorityLadder::calibrated(levels).unwrap(),
        PendingLimits {
            max_pending: k,
            volume_bound: 5.0,
            pending_cap: 5.0,
        },
    )
    .unwrap()
}

fn small_grid(p: &CexDexProblem) -> GridSpec {
    let s = Axis::centered(2820.0, 300.0, 9).unwrap();
    let q = Axis::new(-10.0, 10.0, 9).unwrap();
    let vg = if p.limits.max_pending == 0 {
        vec![]
    } else {
        symmetric_volume_grid(5.0, 2)
    };
    GridSpec::with_auto_steps(p, s, s, q, 20, vg, 60.0).unwrap()
}

#[test]
fn zero_steps_returns_terminal_condition() {
    let p = problem(2, 1);
    let g = small_grid(&p);
    let g0 = GridSpec::new(&p, g.s, g.z, g.q, 0, g.volume_grid.clone(), g.nu_max).unwrap();
    let sol = solve(&p, &g0, &SolveOptions::default()).unwrap();
    assert_eq!(sol.value.retained().collect::<Vec<_>>(), vec![0]);
    assert_eq!(
        sol.value.slice(0).unwrap(),
        terminal_slice(&p, &g0).as_slice()
    );
}

#[test]
fn terminal_slice_is_exact_for_every_config() {
    let p = problem(2, 1);
    let g = small_grid(&p);
    let sol = solve(&p, &g, &SolveOptions::default()).unwrap();
    let shape = sol.value.shape;
    for c in 0..shape.nc {
        for i in 0..shape.ns {
            for j in 0..shape.nz {
                for k in 0..shape.nq {
                    let (s, q) = (g.s.value(i), g.q.value(k));
                    assert_eq!(sol.value.get(g.t_steps, i, j, k, c).unwrap(), q * s - q * q);
                }
            }
        }
    }
    for c in 0..sol.policy.submittable {
        for i in 0..shape.ns {
            assert!(sol.policy.continuation(g.t_steps, i, 4, 4, c));
        }
    }
}

#[test]
fn constant_slice_hamiltonian() {
    let p = problem(1, 0);
    let s = Axis::centered(2820.0, 300.0, 9).unwrap();
    let q = Axis::new(-10.0, 10.0, 9).unwrap();
    let g = GridSpec::new(&p, s, s, q, 0, vec![], 1e6).unwrap();
    let slice = vec![3.0; g.slice_len()];
    for k in [1, 4, 7] {
        let h = hamiltonian_continuous(&p, &g, &slice, 0, 4, 4, k).unwrap();
        let (sv, qv) = (g.s.value(4), g.q.value(k));
        let kimp = p.market.temp_impact;
        let expect = sv * sv / (4.0 * kimp) - qv * qv;
        assert!(
            (h.value - expect).abs() < 1e-6 * expect.abs(),
            "{} vs {}",
            h.value,
            expect
        );
        assert!((h.nu + sv / (2.0 * kimp)).abs() < 1e-9);
    }
}

#[test]
fn linear_in_inventory_gives_zero_rate() {
    let p = problem(1, 0);
    let g = small_grid(&p);
    let shape = Shape::of(&g);
    let mut slice = vec![0.0; g.slice_len()];
    for i in 0..shape.ns {
        for j in 0..shape.nz {
            for k in 0..shape.nq {
                slice[g.offset(0, i, j, k)] = g.q.value(k) * g.s.value(i);
            }
        }
    }
    let h = hamiltonian_continuous(&p, &g, &slice, 0, 4, 4, 6).unwrap();
    assert_eq!(h.nu, 0.0);
    let q = g.q.value(6);
    assert!((h.value + q * q).abs() < 1e-9);
}

#[test]
fn quadratic_inventory_matches_riccati_sup_term() {
    // v = q s + θ q²: sup_ν term → θ² q² / k as Δq → 0 (one-sided stencil).
    let p = problem(1, 0);
    let s = Axis::centered(2820.0, 300.0, 5).unwrap();
    let q = Axis::new(-10.0, 10.0, 2001).unwrap();
    let g = GridSpec::new(&p, s, s, q, 0, vec![], 1e6).unwrap();
    let theta = -0.8;
    let shape = Shape::of(&g);
    let mut slice = vec![0.0; g.slice_len()];
    for i in 0..shape.ns {
        for j in 0..shape.nz {
            for k in 0..shape.nq {
                let (sv, qv) = (g.s.value(i), g.q.value(k));
                slice[g.offset(0, i, j, k)] = qv * sv + theta * qv * qv;
            }
        }
    }
    for k in [1500, 1800, 300] {
        let qv = g.q.value(k);
        let h = hamiltonian_continuous(&p, &g, &slice, 0, 2, 2, k).unwrap();
        let sup = h.value + qv * qv;
        let expect = theta * theta * qv * qv / p.market.temp_impact;
        assert!((sup - expect).abs() < 2e-3 * expect, "{sup} vs {expect}");
    }
}

fn exec_grid() -> (CexDexProblem, GridSpec) {
    let p = CexDexProblem::new(
        MarketParams::default(),
        PriorityLadder::new(vec![100.0, 300.0], vec![2.0, 2.5]).unwrap(),
        PendingLimits {
            max_pending: 1,
            volume_bound: 1.0,
            pending_cap: 1.0,
        },
    )
    .unwrap();
    let s = Axis::new(2720.0, 2920.0, 5).unwrap();
    let q = Axis::new(-4.0, 4.0, 9).unwrap();
    let g = GridSpec::new(&p, s, s, q, 0, vec![-1.0, 1.0], 60.0).unwrap();
    (p, g)
}

#[test]
fn execution_term_examples() {
    let (p, g) = exec_grid();
    let slice = vec![11.0; g.slice_len()];
    assert_eq!(execution_term(&p, &g, &slice, 0, 0, 2, 2, 4).unwrap(), 0.0);
    let sell = g
        .space
        .index_of(
            &crate::control::PendingConfig::new(vec![1, 0], vec![-1.0, 0.0], g.space.limits())
                .unwrap(),
        )
        .unwrap();
    assert_eq!(g.z.value(2), 2820.0);
    let e = execution_term(&p, &g, &slice, 0, sell, 2, 2, 4).unwrap();
    // 2 * (γ(-1, 2820) - 100), γ from the constant-product oracle
    assert!((e - 5434.016260947377).abs() < 1e-8, "{e}");
}

#[test]
fn execution_term_vanishes_when_value_absorbs_cashflow() {
    let (p, g) = exec_grid();
    let shape = Shape::of(&g);
    let sell_cfg =
        crate::control::PendingConfig::new(vec![1, 0], vec![-1.0, 0.0], g.space.limits()).unwrap();
    let sell = g.space.index_of(&sell_cfg).unwrap();
    let mut slice = vec![0.0; g.slice_len()];
    let cash =
        crate::cexdex::intervention_cashflow(-1.0, 2820.0, 0, &p.ladder, p.market.depth).unwrap();
    for i in 0..shape.ns {
        for j in 0..shape.nz {
            for k in 0..shape.nq {
                slice[g.offset(sell, i, j, k)] = cash;
            }
        }
    }
    assert_eq!(
        execution_term(&p, &g, &slice, 0, sell, 2, 2, 4).unwrap(),
        0.0
    );
}

#[test]
fn intervention_tie_break_and_argmax() {
    let (_, g) = exec_grid();
    let mut slice = vec![1.0; g.slice_len()];
    let c = intervention_max(&g, &slice, 0, 1, 1, 1).unwrap();
    assert_eq!((c.level, c.size, c.value), (0, -1.0, 1.0));
    let target = g
        .space
        .submits(0)
        .iter()
        .find(|m| m.level == 1 && m.size == 1.0)
        .unwrap()
        .target;
    slice[g.offset(target, 1, 1, 1)] = 2.0;
    let c = intervention_max(&g, &slice, 0, 1, 1, 1).unwrap();
    assert_eq!((c.level, c.size, c.value), (1, 1.0, 2.0));
    assert_eq!(
        intervention_max(&g, &slice, target, 1, 1, 1),
        Err(Error::NoAdmissibleImpulse)
    );
}

#[test]
fn linear_terminal_is_steady_without_penalties() {
    let mut p = problem(1, 0);
    p.market.running_penalty = 0.0;
    p.market.terminal_penalty = 0.0;
    let g = small_grid(&p);
    let term = terminal_slice(&p, &g);
    let (cur, _, nu) = backward_step(&p, &g, g.t_steps - 1, &term).unwrap();
    for (a, b) in cur.iter().zip(&term) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
    assert!(nu.iter().all(|&x| x == 0.0));
}

#[test]
fn unprofitable_impulses_leave_empty_config_unchanged() {
    let mut p = CexDexProblem::new(
        MarketParams::default(),
        PriorityLadder::new(vec![1e9, 2e9], vec![2.0, 2.5]).unwrap(),
        PendingLimits {
            max_pending: 1,
            volume_bound: 5.0,
            pending_cap: 5.0,
        },
    )
    .unwrap();
    p.market.running_penalty = 0.0;
    p.market.terminal_penalty = 0.0;
    let g = small_grid(&p);
    let term = terminal_slice(&p, &g);
    let (cur, dec, _) = backward_step(&p, &g, g.t_steps - 1, &term).unwrap();
    let per = g.nodes_per_config();
    for (a, b) in cur[..per].iter().zip(&term[..per]) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
    assert!(dec.iter().all(|&d| d == 0));
}

#[test]
fn obstacle_is_active_where_exercise_is_chosen() {
    let p = problem(2, 1);
    let g = small_grid(&p);
    let sol = solve(&p, &g, &SolveOptions::default()).unwrap();
    let v0 = sol.value.slice(0).unwrap();
    let mut exercised = 0;
    let shape = sol.value.shape;
    for i in 0..shape.ns {
        for j in 0..shape.nz {
            for k in 0..shape.nq {
                let m = intervention_max(&g, v0, 0, i, j, k).unwrap();
                let v = v0[g.offset(0, i, j, k)];
                assert!(v >= m.value);
                if let Some(imp) = sol.policy.impulse(0, i, j, k, 0) {
                    exercised += 1;
                    assert_eq!(v, m.value);
                    assert_eq!((imp.level, imp.size), (m.level, m.size));
                }
            }
        }
    }
    assert!(exercised > 0);
}

#[test]
fn no_impulse_solve_tracks_riccati_on_small_grid() {
    let p = problem(1, 0);
    let g = small_grid(&p);
    let sol = solve(&p, &g, &SolveOptions::default()).unwrap();
    let theta = riccati_reference(&p.market, &[0.0])[0];
    let shape = sol.value.shape;
    for i in 1..shape.ns - 1 {
        for k in 1..shape.nq - 1 {
            let v = sol.value.get(0, i, 4, k, 0).unwrap();
            let exact = riccati_value(theta, g.s.value(i), g.q.value(k));
            assert!((v - exact).abs() / (1.0 + v.abs()) < 0.01, "{v} vs {exact}");
        }
    }
}

#[test]
fn residual_is_roundoff_and_detects_perturbation() {
    let p = problem(2, 1);
    let g = small_grid(&p);
    let opts = SolveOptions {
        retain_times: vec![0.0, g.time(1), g.time(5), g.time(6)],
        residual_every: 1,
        ..SolveOptions::default()
    };
    let sol = solve(&p, &g, &opts).unwrap();
    let scale = sol
        .value
        .slice(0)
        .unwrap()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = scheme_tolerance(&g, scale);
    let stats = qvi_residual(&sol.value, &g, &p).unwrap();
    assert_eq!(stats.len(), 2);
    for (_, st) in &stats {
        assert!(st.max <= tol);
        assert!(st.max < 1e-6 * (1.0 + scale));
    }
    assert_eq!(sol.diagnostics.residuals.len(), g.t_steps);

    // A full-capacity config obeys the PDE alone, so a unit bump shows up as 1/dt.
    let mut cur = sol.value.slice(5).unwrap().to_vec();
    let full = g.space.len() - 1;
    cur[g.offset(full, 4, 4, 4)] += 1.0;
    let st = residual_between(&p, &g, 5, &cur, sol.value.slice(6).unwrap()).unwrap();
    assert!(st.max >= 0.99 / g.dt(), "{} vs {}", st.max, 1.0 / g.dt());
}

#[test]
fn ladder_nesting_is_monotone() {
    let p3 = problem(3, 1);
    let g3 = small_grid(&p3);
    let mut prev: Option<Vec<f64>> = None;
    for n in 1..=3 {
        let p = CexDexProblem {
            ladder: p3.ladder.prefix(n).unwrap(),
            ..p3.clone()
        };
        let g = GridSpec::new(
            &p,
            g3.s,
            g3.z,
            g3.q,
            g3.t_steps,
            g3.volume_grid.clone(),
            g3.nu_max,
        )
        .unwrap();
        let sol = solve(&p, &g, &SolveOptions::value_only()).unwrap();
        let v0 = sol.value.config_slice(0, 0).unwrap().to_vec();
        if let Some(prev) = &prev {
            for (a, b) in v0.iter().zip(prev) {
                assert!(a >= b, "{a} < {b}");
            }
        }
        prev = Some(v0);
    }
}

#[test]
fn threads_do_not_change_bits() {
    let p = problem(2, 1);
    let g = small_grid(&p);
    let a = solve(
        &p,
        &g,
        &SolveOptions {
            threads: Some(1),
            ..SolveOptions::default()
        },
    )
    .unwrap();
    let b = solve(
        &p,
        &g,
        &SolveOptions {
            threads: Some(3),
            ..SolveOptions::default()
        },
    )
    .unwrap();
    assert_eq!(a.value, b.value);
    assert_eq!(a.policy, b.policy);
}

#[test]
fn random_fee_with_one_level_equals_optimal() {
    let p = problem(1, 1);
    let g = small_grid(&p);
    let ev = solve_with_random_fee_evaluation(&p, &g, None).unwrap();
    let sol = solve(&p, &g, &SolveOptions::value_only()).unwrap();
    assert_eq!(ev.optimal, sol.value.slice(0).unwrap());
    // Nodes where Mv beats v by less than the exercise margin keep the
    // continuation value in the evaluation but take Mv in the solve; the gap
    // is at most one margin per step.
    let big = ev.optimal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = g.t_steps as f64 * exercise_threshold(big);
    for (idx, (a, b)) in ev.optimal.iter().zip(&ev.random).enumerate() {
        assert!(b <= a && a - b <= tol, "{idx}: {a} vs {b}");
    }
}

#[test]
fn random_fee_never_beats_optimal() {
    let p = problem(3, 1);
    let g = small_grid(&p);
    let ev = solve_with_random_fee_evaluation(&p, &g, None).unwrap();
    for (a, b) in ev.optimal.iter().zip(&ev.random) {
        assert!(b <= &(a + 1e-9 * a.abs().max(1.0)));
    }
}

#[test]
fn growth_stays_within_envelope() {
    let p = problem(2, 1);
    let g = small_grid(&p);
    let sol = solve(&p, &g, &SolveOptions::default()).unwrap();
    let d = &sol.diagnostics;
    assert!(d.max_growth_ratio <= 100.0 * d.growth_constant);
    let strict = SolveOptions {
        growth_factor: 1e-3,
        ..SolveOptions::default()
    };
    assert!(matches!(
        solve(&p, &g, &strict),
        Err(Error::GrowthViolation { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn scheme_is_monotone_in_terminal_data(seed in 0u64..1000, bump in 0.0f64..50.0) {
        let p = problem(2, 1);
        let g = small_grid(&p);
        let base = terminal_slice(&p, &g);
        let mut raised = base.clone();
        let mut x = seed;
        for v in raised.iter_mut() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v += bump * ((x >> 33) as f64 / (1u64 << 31) as f64);
        }
        let a = solve_with_terminal(&p, &g, &SolveOptions::value_only(), base).unwrap();
        let b = solve_with_terminal(&p, &g, &SolveOptions::value_only(), raised).unwrap();
        for (lo, hi) in a.value.slice(0).unwrap().iter().zip(b.value.slice(0).unwrap()) {
            prop_assert!(hi >= lo);
        }
    }
}

#[test]
fn execution_beyond_q_axis_keeps_inventory_value() {
    // At the lower q edge a sell of 1 leaves the axis; the overflow is valued
    // at the terminal Riccati coefficient, so the term equals the exact
    // terminal-reward increment plus the cash flow.
    let (p, g) = exec_grid();
    let slice = terminal_slice(&p, &g);
    let sell_cfg =
        crate::control::PendingConfig::new(vec![1, 0], vec![-1.0, 0.0], g.space.limits()).unwrap();
    let sell = g.space.index_of(&sell_cfg).unwrap();
    let (i, j, k) = (2, 2, 0);
    let (s, q) = (g.s.value(i), g.q.value(k));
    let e = execution_term(&p, &g, &slice, 0, sell, i, j, k).unwrap();
    let cash =
        crate::cexdex::intervention_cashflow(-1.0, g.z.value(j), 0, &p.ladder, p.market.depth)
            .unwrap();
    let dg = crate::cexdex::terminal_reward(s, q - 1.0, &p.market)
        - crate::cexdex::terminal_reward(s, q, &p.market);
    let expect = p.ladder.rate(0) * (dg + cash);
    assert!((e - expect).abs() < 1e-9 * expect.abs(), "{e} vs {expect}");
    assert!(e < 0.0);
}
