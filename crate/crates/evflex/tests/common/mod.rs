#![allow(dead_code)]

use std::path::PathBuf;

use evflex::io::{load_network, load_pools};
use evflex_core::netmodel::NetworkParts;
use evflex_core::{Branch, ChargingPoolSpec, NetworkModel, PerUnitBase, TaskSpec, UtilityFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn bundled() -> (NetworkModel, Vec<ChargingPoolSpec>) {
    let net = load_network(&data_dir().join("network.json")).unwrap();
    let pools = load_pools(&data_dir().join("pools.json"), &net).unwrap();
    (net, pools)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random utility with `kappa` segments, jumps of either sign allowed.
pub fn random_utility(r: &mut impl Rng, kappa: usize) -> UtilityFunction {
    random_utility_covering(r, kappa, 0.0)
}

/// Same, with the domain stretched to reach at least `domain` kWh.
pub fn random_utility_covering(r: &mut impl Rng, kappa: usize, domain: f64) -> UtilityFunction {
    let steps: Vec<f64> = (0..kappa).map(|_| r.random_range(5.0..60.0)).collect();
    let stretch = (domain / steps.iter().sum::<f64>()).max(1.0);
    let mut alpha = vec![0.0];
    for s in steps {
        let last = *alpha.last().unwrap();
        alpha.push(last + s * stretch);
    }
    let h: Vec<f64> = (0..kappa).map(|_| r.random_range(-0.5..2.0)).collect();
    let b: Vec<f64> = (0..kappa).map(|_| r.random_range(-20.0..30.0)).collect();
    UtilityFunction::new(alpha, h, b).unwrap()
}

/// Lowest cost a segment choice can reach at `phi`: the origin at 0, or
/// `f_k(phi)` for every segment whose closed interval holds `phi`.
pub fn enumerate_min_cost(u: &UtilityFunction, phi: f64) -> f64 {
    let a = u.breakpoints();
    let mut best = if phi == 0.0 { 0.0 } else { f64::INFINITY };
    for k in 1..=u.kappa() {
        if a[k - 1] <= phi && phi <= a[k] {
            best = best.min(u.slopes()[k - 1] * phi + u.intercepts()[k - 1]);
        }
    }
    best
}

pub struct Instance {
    pub net: NetworkModel,
    pub pools: Vec<ChargingPoolSpec>,
}

pub struct InstanceShape {
    pub nodes: usize,
    pub periods: usize,
    pub pools: usize,
    pub tasks_per_pool: usize,
    pub kappa: usize,
}

/// Random radial feeder with charging pools. Impedances and loads are
/// kept moderate so every instance is feasible.
pub fn random_instance(seed: u64, shape: &InstanceShape) -> Instance {
    let mut r = rng(seed);
    let n = shape.nodes;
    let t = shape.periods;
    let branches: Vec<Branch> = (1..n)
        .map(|j| Branch {
            from: r.random_range(0..j),
            to: j,
            resistance: r.random_range(0.002..0.02),
            reactance: r.random_range(0.002..0.02),
            current_cap: r.random_range(0.8..2.0),
        })
        .collect();
    let mut p = vec![vec![0.0; t]; n];
    let mut q = vec![vec![0.0; t]; n];
    for i in 1..n {
        for k in 0..t {
            p[i][k] = r.random_range(0.0..0.04);
            q[i][k] = p[i][k] * r.random_range(0.2..0.6);
        }
    }
    let net = NetworkModel::new(NetworkParts {
        name: format!("random-{seed}"),
        node_ids: (0..n).map(|i| i.to_string()).collect(),
        substation: 0,
        branches,
        base_demand_p: p,
        base_demand_q: q,
        v_min: 0.95,
        v_max: 1.05,
        v_substation: 1.0,
        base: PerUnitBase::new(1.0e6, 11.0e3).unwrap(),
        periods: t,
        delta_t: 1.0,
    })
    .unwrap();
    let pools = (0..shape.pools)
        .map(|s| ChargingPoolSpec {
            pool_id: format!("cp{s}"),
            node: r.random_range(1..n),
            p_max_kw: vec![r.random_range(40.0..120.0); t],
            energy_price: (0..t).map(|_| r.random_range(0.1..0.3)).collect(),
            utility: random_utility_covering(&mut r, shape.kappa, 40.0 * shape.tasks_per_pool as f64),
            tasks: (0..shape.tasks_per_pool)
                .map(|k| TaskSpec {
                    task_id: format!("t{k}"),
                    mean_arrival: r.random_range(0.0..(t as f64 - 2.0).max(0.5)),
                    mean_duration_rate: r.random_range(0.2..0.8),
                    e_min_kwh: 0.0,
                    e_max_kwh: r.random_range(10.0..40.0),
                    x_max_kw: 22.0,
                })
                .collect(),
        })
        .collect();
    Instance { net, pools }
}
