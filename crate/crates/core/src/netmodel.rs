//! Radial distribution network and charging-pool data.
//!
//! Everything electrical is held in per-unit on a single-phase-equivalent
//! base: `S_base` is three-phase, `V_base` line-to-line, so
//! `Z_base = V_base² / S_base` and `I_base = S_base / (√3 · V_base)`.
//! Charging-pool quantities stay in kW / kWh; the OPF builder converts pool
//! draws with [`PerUnitBase::kw_to_pu`].

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::TaskSpec;
use crate::utility::UtilityFunction;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Per-unit system. `s_base_va` is three-phase apparent power, `v_base_v`
/// line-to-line voltage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    pub s_base_va: f64,
    pub v_base_v: f64,
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self { s_base_va: 1.0e6, v_base_v: 11.0e3 }
    }
}

impl PerUnitBase {
    pub fn new(s_base_va: f64, v_base_v: f64) -> Result<Self, NetworkError> {
        if !(s_base_va > 0.0 && s_base_va.is_finite() && v_base_v > 0.0 && v_base_v.is_finite()) {
            return Err(NetworkError::InvalidBase { s_base_va, v_base_v });
        }
        Ok(Self { s_base_va, v_base_v })
    }

    pub fn z_base_ohm(&self) -> f64 {
        self.v_base_v * self.v_base_v / self.s_base_va
    }

    pub fn i_base_amp(&self) -> f64 {
        self.s_base_va / (SQRT_3 * self.v_base_v)
    }

    pub fn s_base_kw(&self) -> f64 {
        self.s_base_va / 1.0e3
    }

    pub fn ohm_to_pu(&self, ohm: f64) -> f64 {
        ohm / self.z_base_ohm()
    }

    pub fn pu_to_ohm(&self, pu: f64) -> f64 {
        pu * self.z_base_ohm()
    }

    pub fn amp_to_pu(&self, amp: f64) -> f64 {
        amp / self.i_base_amp()
    }

    pub fn pu_to_amp(&self, pu: f64) -> f64 {
        pu * self.i_base_amp()
    }

    /// Also used for kvar → pu.
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / self.s_base_kw()
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.s_base_kw()
    }
}

/// A line section. After [`NetworkModel::new`] every branch is oriented
/// away from the substation: `from` is the parent node, `to` the child.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// pu
    pub resistance: f64,
    /// pu
    pub reactance: f64,
    /// pu
    pub current_cap: f64,
}

/// Why a branch set is not a tree rooted at the substation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadialDiagnostic {
    UnknownNode { branch: usize, node: usize },
    SelfLoop { branch: usize, node: String },
    MultiEdge { branches: (usize, usize), nodes: (String, String) },
    /// Branches that close a cycle when the branch list is scanned in order.
    Cycle { chords: Vec<(usize, String, String)> },
    /// Nodes with no path to the substation.
    Disconnected { unreachable: Vec<String> },
}

impl fmt::Display for RadialDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownNode { branch, node } => {
                write!(f, "branch #{branch} references unknown node index {node}")
            }
            Self::SelfLoop { branch, node } => write!(f, "branch #{branch} is a self-loop at node {node}"),
            Self::MultiEdge { branches, nodes } => write!(
                f,
                "branches #{} and #{} both connect {}-{}",
                branches.0, branches.1, nodes.0, nodes.1
            ),
            Self::Cycle { chords } => {
                write!(f, "cycle closed by")?;
                for (b, i, j) in chords {
                    write!(f, " #{b}({i}-{j})")?;
                }
                Ok(())
            }
            Self::Disconnected { unreachable } => {
                write!(f, "nodes not connected to the substation:")?;
                for n in unreachable {
                    write!(f, " {n}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum NetworkError {
    #[error("network is not radial: {0}")]
    Radial(RadialDiagnostic),
    #[error("substation index {0} is not a node")]
    UnknownSubstation(usize),
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("branch #{0}: resistance and reactance must be nonnegative with at least one positive")]
    NonPositiveImpedance(usize),
    #[error("branch #{0}: current cap must be positive")]
    NonPositiveCap(usize),
    #[error("voltage limits must satisfy 0 < v_min < v_substation <= v_max")]
    VoltageLimits,
    #[error("invalid per-unit base (S = {s_base_va} VA, V = {v_base_v} V)")]
    InvalidBase { s_base_va: f64, v_base_v: f64 },
    #[error("horizon must have at least one period of positive length")]
    InvalidHorizon,
    #[error("demand profile for node {node} has {got} entries, expected {expected}")]
    DemandShape { node: String, got: usize, expected: usize },
    #[error("negative or non-finite demand at node {node}, period {period}")]
    NegativeDemand { node: String, period: usize },
    #[error("pool {pool}: {reason}")]
    InvalidPool { pool: String, reason: String },
}

/// Traversal data derived from a validated tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    /// Breadth-first node order starting at the substation.
    pub order: Vec<usize>,
    /// Branch feeding each node; `None` for the substation.
    pub parent_branch: Vec<Option<usize>>,
    /// Branches leaving each node towards its children.
    pub child_branches: Vec<Vec<usize>>,
}

/// Checks that `edges` forms a spanning tree of `node_ids` and returns the
/// breadth-first orientation from `substation`.
pub fn check_radial(
    node_ids: &[String],
    substation: usize,
    edges: &[(usize, usize)],
) -> Result<Topology, RadialDiagnostic> {
    let n = node_ids.len();
    for (b, &(i, j)) in edges.iter().enumerate() {
        for node in [i, j] {
            if node >= n {
                return Err(RadialDiagnostic::UnknownNode { branch: b, node });
            }
        }
        if i == j {
            return Err(RadialDiagnostic::SelfLoop { branch: b, node: node_ids[i].clone() });
        }
    }

    let mut seen: Vec<((usize, usize), usize)> =
        edges.iter().enumerate().map(|(b, &(i, j))| ((i.min(j), i.max(j)), b)).collect();
    seen.sort();
    for w in seen.windows(2) {
        if w[0].0 == w[1].0 {
            let (i, j) = w[0].0;
            return Err(RadialDiagnostic::MultiEdge {
                branches: (w[0].1, w[1].1),
                nodes: (node_ids[i].clone(), node_ids[j].clone()),
            });
        }
    }

    // Union-find in branch order; the branch that joins two already
    // connected nodes is reported as the chord.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut chords = Vec::new();
    for (b, &(i, j)) in edges.iter().enumerate() {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri == rj {
            chords.push((b, node_ids[i].clone(), node_ids[j].clone()));
        } else {
            parent[ri] = rj;
        }
    }
    if !chords.is_empty() {
        return Err(RadialDiagnostic::Cycle { chords });
    }

    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (b, &(i, j)) in edges.iter().enumerate() {
        adjacency[i].push((j, b));
        adjacency[j].push((i, b));
    }
    let mut parent_branch = vec![None; n];
    let mut child_branches = vec![Vec::new(); n];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([substation]);
    visited[substation] = true;
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &(j, b) in &adjacency[i] {
            if !visited[j] {
                visited[j] = true;
                parent_branch[j] = Some(b);
                child_branches[i].push(b);
                queue.push_back(j);
            }
        }
    }
    if order.len() != n {
        let unreachable =
            (0..n).filter(|&i| !visited[i]).map(|i| node_ids[i].clone()).collect();
        return Err(RadialDiagnostic::Disconnected { unreachable });
    }
    Ok(Topology { order, parent_branch, child_branches })
}

/// Everything needed to build a [`NetworkModel`], already in per-unit.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParts {
    pub name: String,
    pub node_ids: Vec<String>,
    pub substation: usize,
    pub branches: Vec<Branch>,
    /// `[node][period]`, pu
    pub base_demand_p: Vec<Vec<f64>>,
    /// `[node][period]`, pu
    pub base_demand_q: Vec<Vec<f64>>,
    pub v_min: f64,
    pub v_max: f64,
    pub v_substation: f64,
    pub base: PerUnitBase,
    pub periods: usize,
    /// hours
    pub delta_t: f64,
}

/// A validated radial network. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    parts: NetworkParts,
    topology: Topology,
}

impl NetworkModel {
    pub fn new(mut parts: NetworkParts) -> Result<Self, NetworkError> {
        let n = parts.node_ids.len();
        let mut ids = parts.node_ids.clone();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(NetworkError::DuplicateNode(w[0].clone()));
        }
        if parts.substation >= n {
            return Err(NetworkError::UnknownSubstation(parts.substation));
        }
        PerUnitBase::new(parts.base.s_base_va, parts.base.v_base_v)?;
        if parts.periods == 0 || !(parts.delta_t > 0.0 && parts.delta_t.is_finite()) {
            return Err(NetworkError::InvalidHorizon);
        }
        if !(parts.v_min > 0.0 && parts.v_min < parts.v_substation && parts.v_substation <= parts.v_max)
        {
            return Err(NetworkError::VoltageLimits);
        }
        for (b, br) in parts.branches.iter().enumerate() {
            let ok = br.resistance >= 0.0
                && br.reactance >= 0.0
                && (br.resistance > 0.0 || br.reactance > 0.0)
                && br.resistance.is_finite()
                && br.reactance.is_finite();
            if !ok {
                return Err(NetworkError::NonPositiveImpedance(b));
            }
            if !(br.current_cap > 0.0) {
                return Err(NetworkError::NonPositiveCap(b));
            }
        }
        for profile in [&parts.base_demand_p, &parts.base_demand_q] {
            if profile.len() != n {
                return Err(NetworkError::DemandShape {
                    node: String::from("<all>"),
                    got: profile.len(),
                    expected: n,
                });
            }
            for (i, row) in profile.iter().enumerate() {
                if row.len() != parts.periods {
                    return Err(NetworkError::DemandShape {
                        node: parts.node_ids[i].clone(),
                        got: row.len(),
                        expected: parts.periods,
                    });
                }
                if let Some(t) = row.iter().position(|d| !(*d >= 0.0 && d.is_finite())) {
                    return Err(NetworkError::NegativeDemand {
                        node: parts.node_ids[i].clone(),
                        period: t,
                    });
                }
            }
        }

        let edges: Vec<(usize, usize)> = parts.branches.iter().map(|b| (b.from, b.to)).collect();
        let topology =
            check_radial(&parts.node_ids, parts.substation, &edges).map_err(NetworkError::Radial)?;
        for (j, pb) in topology.parent_branch.iter().enumerate() {
            if let Some(b) = *pb {
                let br = &mut parts.branches[b];
                if br.to != j {
                    core::mem::swap(&mut br.from, &mut br.to);
                }
            }
        }
        Ok(Self { parts, topology })
    }

    /// Runs the tree check again on this model's branch set.
    pub fn validate_radial(&self) -> Result<(), RadialDiagnostic> {
        let edges: Vec<(usize, usize)> = self.parts.branches.iter().map(|b| (b.from, b.to)).collect();
        check_radial(&self.parts.node_ids, self.parts.substation, &edges).map(|_| ())
    }

    pub fn name(&self) -> &str {
        &self.parts.name
    }
    pub fn node_ids(&self) -> &[String] {
        &self.parts.node_ids
    }
    pub fn node_count(&self) -> usize {
        self.parts.node_ids.len()
    }
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.parts.node_ids.iter().position(|n| n == id)
    }
    pub fn substation(&self) -> usize {
        self.parts.substation
    }
    pub fn branches(&self) -> &[Branch] {
        &self.parts.branches
    }
    pub fn base_demand_p(&self, node: usize, period: usize) -> f64 {
        self.parts.base_demand_p[node][period]
    }
    pub fn base_demand_q(&self, node: usize, period: usize) -> f64 {
        self.parts.base_demand_q[node][period]
    }
    pub fn v_min(&self) -> f64 {
        self.parts.v_min
    }
    pub fn v_max(&self) -> f64 {
        self.parts.v_max
    }
    pub fn v_substation(&self) -> f64 {
        self.parts.v_substation
    }
    pub fn base(&self) -> PerUnitBase {
        self.parts.base
    }
    pub fn periods(&self) -> usize {
        self.parts.periods
    }
    pub fn delta_t(&self) -> f64 {
        self.parts.delta_t
    }
    pub fn topology(&self) -> &Topology {
        &self.topology
    }
    pub fn parts(&self) -> &NetworkParts {
        &self.parts
    }

    /// Total base demand per period, pu.
    pub fn total_demand(&self, period: usize) -> (f64, f64) {
        let p = self.parts.base_demand_p.iter().map(|r| r[period]).sum();
        let q = self.parts.base_demand_q.iter().map(|r| r[period]).sum();
        (p, q)
    }
}

/// A charging pool attached to one network node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargingPoolSpec {
    pub pool_id: String,
    /// Node index in the network.
    pub node: usize,
    /// Connection capacity per period, kW.
    pub p_max_kw: Vec<f64>,
    /// Energy price per period, currency per kWh.
    pub energy_price: Vec<f64>,
    pub utility: UtilityFunction,
    pub tasks: Vec<TaskSpec>,
}

impl ChargingPoolSpec {
    pub fn validate(&self, net: &NetworkModel) -> Result<(), NetworkError> {
        let err = |reason: String| NetworkError::InvalidPool { pool: self.pool_id.clone(), reason };
        if self.node >= net.node_count() {
            return Err(err(alloc::format!("node index {} not in network", self.node)));
        }
        if self.p_max_kw.len() != net.periods() || self.energy_price.len() != net.periods() {
            return Err(err(alloc::format!(
                "p_max / price profiles must have {} entries",
                net.periods()
            )));
        }
        if self.p_max_kw.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(err("p_max must be finite and nonnegative".into()));
        }
        if self.energy_price.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(err("energy price must be finite and nonnegative".into()));
        }
        for task in &self.tasks {
            task.validate(net.periods()).map_err(|e| err(alloc::format!("{e}")))?;
        }
        Ok(())
    }

    /// Upper bound on what the pool could ever draw, kW.
    pub fn task_power_sum_kw(&self) -> f64 {
        self.tasks.iter().map(|t| t.x_max_kw).sum()
    }
}

/// Voltage magnitude from its square, clamped at zero.
pub fn voltage_from_sq(v_sq: f64) -> f64 {
    libm::sqrt(v_sq.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| i.to_string()).collect()
    }

    fn parts(n: usize, edges: &[(usize, usize)]) -> NetworkParts {
        NetworkParts {
            name: "t".into(),
            node_ids: ids(n),
            substation: 0,
            branches: edges
                .iter()
                .map(|&(i, j)| Branch { from: i, to: j, resistance: 0.1, reactance: 0.1, current_cap: 1.0 })
                .collect(),
            base_demand_p: vec![vec![0.0; 2]; n],
            base_demand_q: vec![vec![0.0; 2]; n],
            v_min: 0.95,
            v_max: 1.05,
            v_substation: 1.0,
            base: PerUnitBase::default(),
            periods: 2,
            delta_t: 1.0,
        }
    }

    #[test]
    fn minimal_two_node_tree() {
        let net = NetworkModel::new(parts(2, &[(0, 1)])).unwrap();
        assert_eq!(net.branches().len(), 1);
        assert!(net.validate_radial().is_ok());
        assert_eq!(net.topology().order, vec![0, 1]);
    }

    #[test]
    fn repeated_branch_is_multi_edge() {
        let err = NetworkModel::new(parts(3, &[(0, 1), (1, 0)])).unwrap_err();
        match err {
            NetworkError::Radial(RadialDiagnostic::MultiEdge { branches, .. }) => {
                assert_eq!(branches, (0, 1))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn chord_is_reported() {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 1)];
        let d = check_radial(&ids(4), 0, &edges).unwrap_err();
        assert_eq!(
            d,
            RadialDiagnostic::Cycle { chords: vec![(3, "4".to_string(), "2".to_string())] }
        );
    }

    #[test]
    fn two_components_list_unreachable_nodes() {
        let edges = [(0, 1), (2, 3)];
        let d = check_radial(&ids(4), 0, &edges).unwrap_err();
        assert_eq!(
            d,
            RadialDiagnostic::Disconnected { unreachable: vec!["3".to_string(), "4".to_string()] }
        );
    }

    #[test]
    fn branches_are_oriented_from_the_substation() {
        let net = NetworkModel::new(parts(3, &[(1, 0), (2, 1)])).unwrap();
        for br in net.branches() {
            assert_eq!(net.topology().parent_branch[br.to].map(|b| net.branches()[b].to), Some(br.to));
        }
        assert_eq!(net.branches()[0].from, 0);
        assert_eq!(net.branches()[1].from, 1);
    }

    #[test]
    fn rejects_bad_limits_and_caps() {
        let mut p = parts(2, &[(0, 1)]);
        p.v_min = 1.0;
        assert_eq!(NetworkModel::new(p).unwrap_err(), NetworkError::VoltageLimits);
        let mut p = parts(2, &[(0, 1)]);
        p.branches[0].current_cap = 0.0;
        assert_eq!(NetworkModel::new(p).unwrap_err(), NetworkError::NonPositiveCap(0));
        let mut p = parts(2, &[(0, 1)]);
        p.base_demand_p[1][1] = -0.1;
        assert!(matches!(NetworkModel::new(p).unwrap_err(), NetworkError::NegativeDemand { .. }));
        let mut p = parts(2, &[(0, 1)]);
        p.substation = 7;
        assert_eq!(NetworkModel::new(p).unwrap_err(), NetworkError::UnknownSubstation(7));
    }

    #[test]
    fn ampacity_conversion_uses_line_to_line_base() {
        let base = PerUnitBase::new(1.0e6, 11.0e3).unwrap();
        let i_base = 1.0e6 / (3f64.sqrt() * 11.0e3);
        assert!((base.amp_to_pu(88.0) - 88.0 / i_base).abs() < 1e-12);
        assert!((base.z_base_ohm() - 121.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn per_unit_round_trip(s in 1.0e3..1.0e8f64, v in 100.0..500.0e3f64, x in 1e-6..1e6f64) {
            let base = PerUnitBase::new(s, v).unwrap();
            let rel = |a: f64, b: f64| ((a - b) / b).abs();
            prop_assert!(rel(base.pu_to_ohm(base.ohm_to_pu(x)), x) <= 1e-12);
            prop_assert!(rel(base.pu_to_amp(base.amp_to_pu(x)), x) <= 1e-12);
            prop_assert!(rel(base.pu_to_kw(base.kw_to_pu(x)), x) <= 1e-12);
        }

        #[test]
        fn bfs_order_visits_every_node_once(n in 2usize..40, seed in 0u64..1000) {
            // random tree: node k attaches to some earlier node
            let mut edges = Vec::new();
            let mut s = seed;
            for k in 1..n {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                edges.push(((s >> 33) as usize % k, k));
            }
            let topo = check_radial(&ids(n), 0, &edges).unwrap();
            let mut order = topo.order.clone();
            prop_assert_eq!(order[0], 0);
            order.sort();
            prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
        }
    }
}
