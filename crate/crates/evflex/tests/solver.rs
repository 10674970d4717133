mod common;

use common::{random_instance, InstanceShape};
use evflex::ClarabelBackend;
use evflex_core::conic::SolveMode;
use evflex_core::netmodel::NetworkParts;
use evflex_core::scenario::TaskRef;
use evflex_core::sopf::{ModelMode, RowTag, Sense, VarKey};
use evflex_core::utility::is_convex_shortcut_eligible;
use evflex_core::{
    base_case_program, build_sopf, extract_solution, generate_scenarios, solve_misocp, solve_socp, Branch,
    BuildOptions, ChargingPoolSpec, ConicProgram, NetworkModel, PerUnitBase, Realization, ScenarioSet,
    SolverOptions, SopfSolution, TaskSpec, UtilityFunction,
};

fn tight() -> SolverOptions {
    SolverOptions { feas_tol: 1e-10, gap_tol: 1e-10, bb_abs_gap: 1e-9, bb_rel_gap: 0.0, ..SolverOptions::default() }
}

fn two_bus(periods: usize, load: (f64, f64)) -> NetworkModel {
    NetworkModel::new(NetworkParts {
        name: "two-bus".into(),
        node_ids: vec!["0".into(), "1".into()],
        substation: 0,
        branches: vec![Branch { from: 0, to: 1, resistance: 0.05, reactance: 0.05, current_cap: 2.0 }],
        base_demand_p: vec![vec![0.0; periods], vec![load.0; periods]],
        base_demand_q: vec![vec![0.0; periods], vec![load.1; periods]],
        v_min: 0.9,
        v_max: 1.1,
        v_substation: 1.0,
        base: PerUnitBase::new(1.0e6, 11.0e3).unwrap(),
        periods,
        delta_t: 1.0,
    })
    .unwrap()
}

/// One pool with one task, present in `window` and asking for `energy`.
fn single_task(periods: usize, window: (usize, usize), energy: f64) -> (Vec<ChargingPoolSpec>, ScenarioSet) {
    let task = TaskSpec {
        task_id: "t0".into(),
        mean_arrival: window.0 as f64,
        mean_duration_rate: 0.5,
        e_min_kwh: 0.0,
        e_max_kwh: energy,
        x_max_kw: 50.0,
    };
    let pool = ChargingPoolSpec {
        pool_id: "cp".into(),
        node: 1,
        p_max_kw: vec![100.0; periods],
        energy_price: (0..periods).map(|t| 0.1 + 0.05 * t as f64).collect(),
        utility: UtilityFunction::new(vec![0.0, 20.0, 50.0], vec![0.5, 1.5], vec![2.0, -8.0]).unwrap(),
        tasks: vec![task],
    };
    let set = ScenarioSet {
        count: 1,
        seed: 0,
        horizon: periods,
        delta_t: 1.0,
        probabilities: vec![1.0],
        tasks: vec![TaskRef { pool: 0, pool_id: "cp".into(), task_id: "t0".into(), x_max_kw: 50.0 }],
        realizations: vec![vec![Realization { arrival: window.0, departure: window.1, energy_kwh: energy }]],
    };
    (vec![pool], set)
}

fn solve(net: &NetworkModel, pools: &[ChargingPoolSpec], set: &ScenarioSet, build: &BuildOptions) -> (ConicProgram, Vec<f64>, SopfSolution) {
    let prog = build_sopf(net, pools, set, build).unwrap();
    let (x, report) = solve_misocp(&ClarabelBackend::new(), &prog, &tight()).unwrap();
    let sol = extract_solution(&prog, &x, &report).unwrap();
    (prog, x, sol)
}

#[test]
fn bound_active_lp() {
    let mut p = ConicProgram::new();
    let x = p.add_continuous(VarKey::Aux(0), f64::NEG_INFINITY, f64::INFINITY);
    p.add_cost(x, 1.0);
    p.add_row(RowTag::Aux(0), vec![(x, 1.0)], Sense::Ge, 3.0);
    let (sol, _) = solve_socp(&ClarabelBackend::new(), &p, &tight()).unwrap();
    assert!((sol[x] - 3.0).abs() < 1e-8);
}

#[test]
fn rotated_cone_by_hand() {
    // min t  s.t.  v·i ≥ p², v = 1, i = t, p = 2
    let mut p = ConicProgram::new();
    let v = p.add_continuous(VarKey::Aux(0), 1.0, 1.0);
    let i = p.add_continuous(VarKey::Aux(1), 0.0, f64::INFINITY);
    let q = p.add_continuous(VarKey::Aux(2), 2.0, 2.0);
    p.add_cost(i, 1.0);
    p.add_cone(v, i, vec![q]);
    let (sol, report) = solve_socp(&ClarabelBackend::new(), &p, &tight()).unwrap();
    assert!((sol[i] - 4.0).abs() < 1e-7, "{}", sol[i]);
    assert!((report.primal_objective - 4.0).abs() < 1e-7);
}

#[test]
fn two_bus_opf_matches_closed_form() {
    let (pl, ql) = (0.1, 0.05);
    let net = two_bus(1, (pl, ql));
    let set = ScenarioSet {
        count: 1,
        seed: 0,
        horizon: 1,
        delta_t: 1.0,
        probabilities: vec![1.0],
        tasks: vec![],
        realizations: vec![],
    };
    let (_, _, sol) = solve(&net, &[], &set, &BuildOptions::default());
    // v² − (1 − 2(RP + XQ)) v + (R² + X²)(P² + Q²) = 0, larger root.
    let (r, x) = (0.05, 0.05);
    let a = 1.0 - 2.0 * (r * pl + x * ql);
    let c = (r * r + x * x) * (pl * pl + ql * ql);
    let v = (a + (a * a - 4.0 * c).sqrt()) / 2.0;
    let i = (pl * pl + ql * ql) / v;
    assert!((sol.voltage_sq[1][0][0] - v).abs() < 1e-7, "{} vs {v}", sol.voltage_sq[1][0][0]);
    assert!((sol.current_sq[0][0][0] - i).abs() < 1e-7, "{} vs {i}", sol.current_sq[0][0][0]);
}

#[test]
fn extracted_values_reproduce_the_objective() {
    let net = two_bus(4, (0.05, 0.02));
    let (pools, set) = single_task(4, (1, 4), 60.0);
    let build = BuildOptions { convex_shortcut: false, ..BuildOptions::default() };
    let (_, _, sol) = solve(&net, &pools, &set, &build);
    let flex: f64 = sol.pool_cost.iter().map(|z| z.iter().zip(&sol.probabilities).map(|(z, p)| z * p).sum::<f64>()).sum();
    let reserve: f64 = (0..4).map(|t| pools[0].energy_price[t] * sol.reserve_kw[0][t] * sol.delta_t).sum();
    let losses: f64 = (0..4)
        .map(|t| build.loss_price * sol.s_base_kw * sol.delta_t * 0.05 * sol.current_sq[0][t][0])
        .sum();
    let recomputed = flex - reserve + losses;
    assert!((recomputed - sol.objective).abs() < 1e-8, "{recomputed} vs {}", sol.objective);
    // 60 kWh asked, at most 3 · 50 deliverable; the cost rows must agree with the utility.
    let z = pools[0].utility.settle(sol.pool_ens_kwh[0][0], 1e-7).unwrap();
    assert!((z - sol.pool_cost[0][0]).abs() < 1e-7);
}

#[test]
fn base_case_charges_as_soon_as_possible() {
    let net = two_bus(5, (0.05, 0.02));
    let (pools, set) = single_task(5, (1, 4), 30.0);
    let prog = base_case_program(&net, &pools, &set).unwrap();
    let (x, report) = solve_misocp(&ClarabelBackend::new(), &prog, &tight()).unwrap();
    let sol = extract_solution(&prog, &x, &report).unwrap();
    let power = &sol.task_power_kw[0][0];
    // The earliest-period preference is a tiny weight, so the interior
    // point only resolves it to about 1e-6 kW.
    assert!((power[1] - 30.0).abs() < 1e-5, "{power:?}");
    for t in [0, 2, 3, 4] {
        assert!(power[t].abs() < 1e-5, "{power:?}");
    }
    assert!(sol.task_ens_kwh[0][0].abs() < 1e-9);
}

#[test]
fn integral_relaxation_needs_one_node() {
    let net = two_bus(3, (0.05, 0.02));
    let (pools, set) = single_task(3, (0, 3), 20.0);
    let build = BuildOptions { convex_shortcut: false, ..BuildOptions::default() };
    let prog = build_sopf(&net, &pools, &set, &build).unwrap();
    assert_eq!(prog.binary_count(), 2);
    let (_, report) = solve_misocp(&ClarabelBackend::new(), &prog, &tight()).unwrap();
    assert_eq!(report.mode, SolveMode::BranchAndBound);
    assert_eq!(report.nodes, 1);
    assert!(report.bound_gap <= 1e-9);
}

fn convex_utility() -> UtilityFunction {
    // Continuous from 0 with rising slopes.
    UtilityFunction::new(vec![0.0, 20.0, 50.0, 120.0], vec![0.2, 0.6, 1.5], vec![0.0, -8.0, -53.0]).unwrap()
}

#[test]
fn convex_shortcut_agrees_with_branch_and_bound() {
    for seed in [3u64, 4] {
        let mut inst = random_instance(seed, &InstanceShape { nodes: 6, periods: 4, pools: 2, tasks_per_pool: 2, kappa: 3 });
        for p in &mut inst.pools {
            p.utility = convex_utility();
        }
        assert!(is_convex_shortcut_eligible(&inst.pools[0].utility));
        let set = generate_scenarios(&inst.pools, 2, seed, 4, 1.0).unwrap();
        let exact = BuildOptions { convex_shortcut: false, ..BuildOptions::default() };
        let (exact_prog, _, exact_sol) = solve(&inst.net, &inst.pools, &set, &exact);
        let (short_prog, _, short_sol) = solve(&inst.net, &inst.pools, &set, &BuildOptions::default());
        assert!(exact_prog.binary_count() > 0);
        assert_eq!(short_prog.binary_count(), 0);
        assert!((exact_sol.objective - short_sol.objective).abs() < 1e-6, "{} vs {}", exact_sol.objective, short_sol.objective);
    }
}

#[test]
fn widening_limits_never_raises_the_optimum() {
    for seed in [11u64, 12, 13] {
        let inst = random_instance(seed, &InstanceShape { nodes: 8, periods: 4, pools: 2, tasks_per_pool: 2, kappa: 2 });
        let set = generate_scenarios(&inst.pools, 3, seed, 4, 1.0).unwrap();
        let build = BuildOptions { convex_shortcut: false, ..BuildOptions::default() };
        let (_, _, narrow) = solve(&inst.net, &inst.pools, &set, &build);

        let mut parts = inst.net.parts().clone();
        parts.v_min = 0.9;
        for b in &mut parts.branches {
            b.current_cap *= 1.5;
        }
        let wide_net = NetworkModel::new(parts).unwrap();
        let (_, _, wide) = solve(&wide_net, &inst.pools, &set, &build);
        assert!(wide.objective <= narrow.objective + 1e-7, "seed {seed}: {} > {}", wide.objective, narrow.objective);
    }
}

#[test]
fn segment_choice_invariants_hold_at_solutions() {
    for seed in [21u64, 22, 23] {
        let inst = random_instance(seed, &InstanceShape { nodes: 6, periods: 4, pools: 2, tasks_per_pool: 3, kappa: 3 });
        let set = generate_scenarios(&inst.pools, 2, seed, 4, 1.0).unwrap();
        let build = BuildOptions { convex_shortcut: false, ..BuildOptions::default() };
        let (prog, x, _) = solve(&inst.net, &inst.pools, &set, &build);
        assert!(!prog.utility_groups.is_empty());
        for g in &prog.utility_groups {
            let active: Vec<usize> = (0..g.segments.len()).filter(|&k| x[g.segments[k]] > 0.5).collect();
            assert!(active.len() <= 1);
            for (k, &y) in g.segments.iter().enumerate() {
                assert!(x[y].abs() < 1e-9 || (x[y] - 1.0).abs() < 1e-9);
                if !active.contains(&k) {
                    assert!(x[g.lambda_upper[k]].abs() < 1e-9 && x[g.lambda_lower[k + 1]].abs() < 1e-9);
                }
            }
            let weights: f64 = g.lambda_lower.iter().chain(&g.lambda_upper).map(|&j| x[j]).sum();
            assert!((weights - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn repeated_solves_are_identical() {
    let inst = random_instance(31, &InstanceShape { nodes: 6, periods: 4, pools: 2, tasks_per_pool: 2, kappa: 3 });
    let set = generate_scenarios(&inst.pools, 2, 31, 4, 1.0).unwrap();
    let build = BuildOptions { convex_shortcut: false, ..BuildOptions::default() };
    let prog = build_sopf(&inst.net, &inst.pools, &set, &build).unwrap();
    let a = solve_misocp(&ClarabelBackend::new(), &prog, &tight()).unwrap();
    let b = solve_misocp(&ClarabelBackend::new(), &prog, &tight()).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn base_mode_is_recorded() {
    let net = two_bus(3, (0.05, 0.02));
    let (pools, set) = single_task(3, (0, 2), 10.0);
    let prog = base_case_program(&net, &pools, &set).unwrap();
    let (x, report) = solve_misocp(&ClarabelBackend::new(), &prog, &tight()).unwrap();
    let sol = extract_solution(&prog, &x, &report).unwrap();
    assert_eq!(sol.mode, ModelMode::Base);
    assert!(sol.reserve_kw[0].iter().all(|&p| p == 0.0));
}
