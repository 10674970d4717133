mod common;

use std::sync::OnceLock;

use common::bundled;
use evflex::montecarlo::validate_areas;
use evflex::ClarabelBackend;
use evflex_core::{
    build_sopf, extract_solution, flexibility_areas, generate_scenarios, solve_misocp, BetaSpec, BuildOptions,
    ChargingPoolSpec, NetworkModel, SolverOptions, SopfSolution,
};
use proptest::prelude::*;

#[test]
fn network_file_has_the_expected_shape() {
    let (net, pools) = bundled();
    assert_eq!(net.node_count(), 34);
    assert_eq!(net.branches().len(), 33);
    assert!(net.validate_radial().is_ok());
    assert_eq!((net.v_min(), net.v_max()), (0.95, 1.05));
    let base = net.base();
    assert_eq!(base.v_base_v, 11.0e3);
    let feeder = net.branches().iter().find(|b| b.from == net.substation()).unwrap();
    assert!((base.pu_to_amp(feeder.current_cap) - 88.0).abs() < 1e-9);
    assert!(feeder.current_cap < 88.0);
    assert_eq!(pools.len(), 4);
}

#[test]
fn plugged_in_tasks_peak_during_the_day() {
    let (net, pools) = bundled();
    let set = generate_scenarios(&pools, 500, 2023, net.periods(), net.delta_t()).unwrap();
    let mut present = vec![0usize; net.periods()];
    for task in &set.realizations {
        for r in task {
            for (t, n) in present.iter_mut().enumerate() {
                if r.is_present(t) {
                    *n += 1;
                }
            }
        }
    }
    let peak = (0..present.len()).max_by_key(|&t| present[t]).unwrap();
    assert!((8..=20).contains(&peak), "peak at {peak}: {present:?}");
}

fn small_plan() -> &'static (NetworkModel, Vec<ChargingPoolSpec>, SopfSolution) {
    static PLAN: OnceLock<(NetworkModel, Vec<ChargingPoolSpec>, SopfSolution)> = OnceLock::new();
    PLAN.get_or_init(|| {
        let (net, pools) = bundled();
        let set = generate_scenarios(&pools, 6, 2023, net.periods(), net.delta_t()).unwrap();
        let prog = build_sopf(&net, &pools, &set, &BuildOptions::default()).unwrap();
        let options = SolverOptions { heuristic_only: true, ..SolverOptions::default() };
        let (x, report) = solve_misocp(&ClarabelBackend::new(), &prog, &options).unwrap();
        let sol = extract_solution(&prog, &x, &report).unwrap();
        (net, pools, sol)
    })
}

#[test]
fn validation_report_for_the_published_risk_levels() {
    let (net, pools, sol) = small_plan();
    for beta in [0.57, 0.99] {
        let areas = flexibility_areas(sol, &BetaSpec::Scalar(beta)).unwrap();
        let report = validate_areas(net, pools, &areas, 5000, 7).unwrap();
        assert_eq!(report.sims, 5000);
        assert_eq!(report.seed, 7);
        assert_eq!(report.beta, Some(beta));
        assert_eq!(report.outcomes.len(), 5000);
        assert_eq!(report.periods.len(), net.periods());
        assert_eq!(report.failed_sims, 0);
        for f in [report.voltage_violation_freq, report.current_violation_freq, report.violation_freq] {
            assert!((0.0..=1.0).contains(&f));
        }
        assert!(report.violation_freq >= report.voltage_violation_freq.max(report.current_violation_freq));
    }
}

#[test]
fn zero_risk_areas_never_violate() {
    let (net, pools, sol) = small_plan();
    let areas = flexibility_areas(sol, &BetaSpec::Scalar(0.0)).unwrap();
    let report = validate_areas(net, pools, &areas, 200, 3).unwrap();
    assert_eq!(report.violation_freq, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn validation_is_a_function_of_its_seed(seed in any::<u64>(), sims in 1usize..60, beta in 0.0..=1.0f64) {
        let (net, pools, sol) = small_plan();
        let areas = flexibility_areas(sol, &BetaSpec::Scalar(beta)).unwrap();
        let a = validate_areas(net, pools, &areas, sims, seed).unwrap();
        let b = validate_areas(net, pools, &areas, sims, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.outcomes.len(), sims);
    }
}
