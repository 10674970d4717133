use evflex_core::flexarea::{flexibility_areas, BetaSpec};
use evflex_core::netmodel::{Branch, ChargingPoolSpec, NetworkModel, NetworkParts, PerUnitBase};
use evflex_core::sopf::{ModelMode, SolutionStatus, SopfSolution};
use evflex_core::utility::UtilityFunction;
use evflex_core::validate::payment::{payment_analysis, PaymentScenario};
use evflex_core::validate::powerflow::{branch_flow_residual, power_flow_period, PowerFlowOptions};
use proptest::prelude::*;

fn synthetic(reserve: Vec<Vec<f64>>, mismatch: Vec<Vec<Vec<f64>>>) -> SopfSolution {
    let pools = reserve.len();
    let periods = reserve[0].len();
    let scenarios = mismatch[0][0].len();
    SopfSolution {
        status: SolutionStatus::Optimal,
        mode: ModelMode::Flex,
        objective: 0.0,
        bound_gap: 0.0,
        periods,
        scenarios,
        delta_t: 1.0,
        s_base_kw: 1000.0,
        probabilities: vec![1.0 / scenarios as f64; scenarios],
        reserve_kw: reserve,
        mismatch_kw: mismatch,
        task_pool: vec![],
        task_power_kw: vec![],
        task_energy_kwh: vec![],
        task_ens_kwh: vec![],
        pool_ens_kwh: vec![vec![0.0; scenarios]; pools],
        pool_cost: vec![vec![0.0; scenarios]; pools],
        voltage_sq: vec![],
        current_sq: vec![],
        flow_p: vec![],
        flow_q: vec![],
        cone_gaps: vec![],
        v_min: 0.95,
        v_max: 1.05,
        substation: 0,
        current_cap: vec![],
    }
}

fn solution_strategy() -> impl Strategy<Value = SopfSolution> {
    (1usize..4, 1usize..5, 1usize..20).prop_flat_map(|(s, t, w)| {
        (
            prop::collection::vec(prop::collection::vec(0.0..200.0f64, t), s),
            prop::collection::vec(prop::collection::vec(prop::collection::vec(0.0..80.0f64, w), t), s),
        )
            .prop_map(|(r, m)| synthetic(r, m))
    })
}

/// Random tree: node k > 0 hangs off a uniformly chosen earlier node.
fn tree_strategy() -> impl Strategy<Value = (NetworkModel, Vec<f64>, Vec<f64>)> {
    (2usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<prop::sample::Index>(), n - 1),
            prop::collection::vec((0.001..0.02f64, 0.001..0.02f64), n - 1),
            prop::collection::vec((0.0..0.03f64, 0.0..0.01f64), n),
        )
            .prop_map(move |(parents, zs, loads)| {
                let branches = parents
                    .iter()
                    .zip(&zs)
                    .enumerate()
                    .map(|(k, (idx, &(r, x)))| Branch {
                        from: idx.index(k + 1),
                        to: k + 1,
                        resistance: r,
                        reactance: x,
                        current_cap: 2.0,
                    })
                    .collect();
                let net = NetworkModel::new(NetworkParts {
                    name: "tree".into(),
                    node_ids: (0..n).map(|i| format!("n{i}")).collect(),
                    substation: 0,
                    branches,
                    base_demand_p: vec![vec![0.0]; n],
                    base_demand_q: vec![vec![0.0]; n],
                    v_min: 0.9,
                    v_max: 1.1,
                    v_substation: 1.0,
                    base: PerUnitBase::new(1e6, 11e3).unwrap(),
                    periods: 1,
                    delta_t: 1.0,
                })
                .unwrap();
                let (p, q) = loads.into_iter().unzip();
                (net, p, q)
            })
    })
}

proptest! {
    #[test]
    fn area_bounds_grow_with_beta(sol in solution_strategy(), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let low = flexibility_areas(&sol, &BetaSpec::Scalar(lo)).unwrap();
        let high = flexibility_areas(&sol, &BetaSpec::Scalar(hi)).unwrap();
        for (x, y) in low.iter().zip(&high) {
            prop_assert_eq!(x.lower_kw, y.lower_kw);
            prop_assert!(x.upper_kw <= y.upper_kw);
            prop_assert!(x.lower_kw <= x.upper_kw);
        }
    }

    #[test]
    fn area_limits_at_zero_and_one(sol in solution_strategy()) {
        let zero = flexibility_areas(&sol, &BetaSpec::Scalar(0.0)).unwrap();
        let one = flexibility_areas(&sol, &BetaSpec::Scalar(1.0)).unwrap();
        for (z, o) in zero.iter().zip(&one) {
            let (s, t) = (z.pool, z.period);
            let p = sol.reserve_kw[s][t];
            let rho_max = sol.mismatch_kw[s][t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(z.upper_kw, p);
            prop_assert_eq!(o.upper_kw, p + rho_max);
        }
    }

    #[test]
    fn sweep_satisfies_branch_flow((net, p, q) in tree_strategy()) {
        let st = power_flow_period(&net, &p, &q, &PowerFlowOptions { tol: 1e-12, max_iter: 200 }).unwrap();
        prop_assert!(branch_flow_residual(&net, &p, &q, &st) <= 1e-8);
    }

    #[test]
    fn no_unserved_energy_pays_full_revenue(
        prices in prop::collection::vec(0.05..0.5f64, 1..6),
        energy in prop::collection::vec(0.0..100.0f64, 6),
        h in 0.1..3.0f64,
        jump in 0.0..20.0f64,
    ) {
        let t = prices.len();
        let utility = UtilityFunction::new(vec![0.0, 50.0], vec![h], vec![jump]).unwrap();
        let pool = ChargingPoolSpec {
            pool_id: "cp".into(),
            node: 1,
            p_max_kw: vec![100.0; t],
            energy_price: prices.clone(),
            utility,
            tasks: vec![],
        };
        let delivered = energy[..t].to_vec();
        let report = payment_analysis(
            std::slice::from_ref(&pool),
            &[PaymentScenario { delivered_kwh: vec![delivered.clone()], ens_kwh: vec![0.0] }],
        )
        .unwrap();
        let revenue: f64 = prices.iter().zip(&delivered).map(|(c, e)| c * e).sum();
        let sc = &report.scenarios[0];
        prop_assert_eq!(sc.cost, 0.0);
        prop_assert!((sc.total - revenue).abs() <= 1e-12 * revenue.max(1.0));
    }
}
