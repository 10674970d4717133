//! Backward/forward sweep power flow on a radial network.
//!
//! Works on the same branch-flow quantities as the OPF (squared voltage and
//! current, receiving-end flows). Each iteration accumulates flows from the
//! leaves towards the substation with the current voltages, then updates the
//! voltages outward from the fixed substation voltage. After convergence a
//! final backward pass makes flows, losses and currents consistent with the
//! last voltages, so the balance and cone equations hold to rounding and the
//! voltage-drop equations to the convergence tolerance.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::NetworkModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowOptions {
    /// Stop when no squared voltage moves by more than this, pu.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PowerFlowError {
    #[error("sweep did not converge in {iterations} iterations (last change {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("voltage collapse at node index {node}")]
    Collapse { node: usize },
    #[error("load vectors must have one finite entry per node")]
    Loads,
}

/// Converged operating point for one period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowState {
    /// Per node.
    pub v_sq: Vec<f64>,
    /// Per branch.
    pub i_sq: Vec<f64>,
    /// Receiving-end active flow per branch.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Last change in squared voltage.
    pub residual: f64,
    pub iterations: usize,
}

impl PowerFlowState {
    pub fn min_voltage(&self) -> f64 {
        self.v_sq.iter().map(|&v| libm::sqrt(v)).fold(f64::INFINITY, f64::min)
    }

    pub fn max_current(&self) -> f64 {
        self.i_sq.iter().map(|&i| libm::sqrt(i)).fold(0.0, f64::max)
    }

    /// Largest `I / I_max` over branches.
    pub fn max_loading(&self, net: &NetworkModel) -> f64 {
        self.i_sq
            .iter()
            .zip(net.branches())
            .map(|(&i, b)| libm::sqrt(i) / b.current_cap)
            .fold(0.0, f64::max)
    }
}

fn backward(net: &NetworkModel, p_load: &[f64], q_load: &[f64], st: &mut PowerFlowState) {
    let topo = net.topology();
    let branches = net.branches();
    for &j in topo.order.iter().rev() {
        let Some(b) = topo.parent_branch[j] else { continue };
        let (mut p, mut q) = (p_load[j], q_load[j]);
        for &c in &topo.child_branches[j] {
            p += st.p[c] + branches[c].resistance * st.i_sq[c];
            q += st.q[c] + branches[c].reactance * st.i_sq[c];
        }
        st.p[b] = p;
        st.q[b] = q;
        st.i_sq[b] = (p * p + q * q) / st.v_sq[j];
    }
}

/// Returns the largest change in squared voltage.
fn forward(net: &NetworkModel, st: &mut PowerFlowState) -> Result<f64, PowerFlowError> {
    let topo = net.topology();
    let branches = net.branches();
    let mut change: f64 = 0.0;
    for &j in &topo.order {
        let Some(b) = topo.parent_branch[j] else { continue };
        let br = &branches[b];
        let (r, x) = (br.resistance, br.reactance);
        let v = st.v_sq[br.from] - 2.0 * (r * st.p[b] + x * st.q[b]) - (r * r + x * x) * st.i_sq[b];
        if !(v > 0.0) {
            return Err(PowerFlowError::Collapse { node: j });
        }
        change = change.max(libm::fabs(v - st.v_sq[j]));
        st.v_sq[j] = v;
    }
    Ok(change)
}

/// Solves one period. Loads are consumption per node in pu; the substation
/// entry is ignored (the substation is the slack).
pub fn power_flow_period(
    net: &NetworkModel,
    p_load: &[f64],
    q_load: &[f64],
    options: &PowerFlowOptions,
) -> Result<PowerFlowState, PowerFlowError> {
    let n = net.node_count();
    if p_load.len() != n || q_load.len() != n || p_load.iter().chain(q_load).any(|v| !v.is_finite()) {
        return Err(PowerFlowError::Loads);
    }
    let m = net.branches().len();
    let v0 = net.v_substation() * net.v_substation();
    let mut st = PowerFlowState {
        v_sq: vec![v0; n],
        i_sq: vec![0.0; m],
        p: vec![0.0; m],
        q: vec![0.0; m],
        residual: f64::INFINITY,
        iterations: 0,
    };
    for it in 1..=options.max_iter {
        backward(net, p_load, q_load, &mut st);
        let change = forward(net, &mut st)?;
        st.residual = change;
        st.iterations = it;
        if change <= options.tol {
            backward(net, p_load, q_load, &mut st);
            return Ok(st);
        }
    }
    Err(PowerFlowError::NoConvergence { iterations: options.max_iter, residual: st.residual })
}

/// Solves every period. `loads_p` / `loads_q` are `[node][period]` in pu.
pub fn power_flow(
    net: &NetworkModel,
    loads_p: &[Vec<f64>],
    loads_q: &[Vec<f64>],
    options: &PowerFlowOptions,
) -> Result<Vec<PowerFlowState>, PowerFlowError> {
    let n = net.node_count();
    if loads_p.len() != n || loads_q.len() != n {
        return Err(PowerFlowError::Loads);
    }
    (0..net.periods())
        .map(|t| {
            let p: Vec<f64> = loads_p.iter().map(|r| r.get(t).copied().unwrap_or(f64::NAN)).collect();
            let q: Vec<f64> = loads_q.iter().map(|r| r.get(t).copied().unwrap_or(f64::NAN)).collect();
            power_flow_period(net, &p, &q, options)
        })
        .collect()
}

/// Base demand of one period plus pool consumption (kW) at the pool nodes.
pub fn period_loads(
    net: &NetworkModel,
    pool_nodes: &[usize],
    pool_kw: &[f64],
    period: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut p: Vec<f64> = (0..net.node_count()).map(|i| net.base_demand_p(i, period)).collect();
    let q: Vec<f64> = (0..net.node_count()).map(|i| net.base_demand_q(i, period)).collect();
    let s_base_kw = net.base().s_base_kw();
    for (&node, &kw) in pool_nodes.iter().zip(pool_kw) {
        p[node] += kw / s_base_kw;
    }
    (p, q)
}

/// Largest violation of the branch-flow equations at a state, pu:
/// nodal balances, voltage drops and `V²_j I² = P² + Q²`.
pub fn branch_flow_residual(net: &NetworkModel, p_load: &[f64], q_load: &[f64], st: &PowerFlowState) -> f64 {
    let topo = net.topology();
    let branches = net.branches();
    let mut worst: f64 = 0.0;
    for j in 0..net.node_count() {
        let Some(b) = topo.parent_branch[j] else { continue };
        let (mut p_out, mut q_out) = (p_load[j], q_load[j]);
        for &c in &topo.child_branches[j] {
            p_out += st.p[c] + branches[c].resistance * st.i_sq[c];
            q_out += st.q[c] + branches[c].reactance * st.i_sq[c];
        }
        worst = worst.max(libm::fabs(st.p[b] - p_out)).max(libm::fabs(st.q[b] - q_out));
    }
    for (b, br) in branches.iter().enumerate() {
        let (r, x) = (br.resistance, br.reactance);
        let drop = st.v_sq[br.from] - 2.0 * (r * st.p[b] + x * st.q[b]) - (r * r + x * x) * st.i_sq[b];
        worst = worst.max(libm::fabs(st.v_sq[br.to] - drop));
        let cone = st.v_sq[br.to] * st.i_sq[b] - st.p[b] * st.p[b] - st.q[b] * st.q[b];
        worst = worst.max(libm::fabs(cone));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Branch, NetworkParts, PerUnitBase};
    use alloc::string::ToString;

    fn feeder(branches: Vec<(usize, usize, f64, f64)>, n: usize) -> NetworkModel {
        NetworkModel::new(NetworkParts {
            name: "t".into(),
            node_ids: (0..n).map(|i| i.to_string()).collect(),
            substation: 0,
            branches: branches
                .into_iter()
                .map(|(from, to, r, x)| Branch { from, to, resistance: r, reactance: x, current_cap: 5.0 })
                .collect(),
            base_demand_p: vec![vec![0.0]; n],
            base_demand_q: vec![vec![0.0]; n],
            v_min: 0.9,
            v_max: 1.1,
            v_substation: 1.0,
            base: PerUnitBase::default(),
            periods: 1,
            delta_t: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn zero_load_is_flat() {
        let net = feeder(vec![(0, 1, 0.05, 0.05), (1, 2, 0.02, 0.01)], 3);
        let st = power_flow_period(&net, &[0.0; 3], &[0.0; 3], &PowerFlowOptions::default()).unwrap();
        assert!(st.v_sq.iter().all(|&v| v == 1.0));
        assert!(st.i_sq.iter().all(|&i| i == 0.0));
    }

    /// Closed form for one line feeding a constant load (P, Q) at the
    /// receiving end: with u = V²_2,
    /// u² − (V²_1 − 2(RP + XQ)) u + (R² + X²)(P² + Q²) = 0, larger root.
    fn two_bus_root(r: f64, x: f64, p: f64, q: f64) -> f64 {
        let b = 1.0 - 2.0 * (r * p + x * q);
        let c = (r * r + x * x) * (p * p + q * q);
        (b + libm::sqrt(b * b - 4.0 * c)) / 2.0
    }

    #[test]
    fn two_bus_matches_closed_form() {
        let net = feeder(vec![(0, 1, 0.05, 0.05)], 2);
        let st = power_flow_period(&net, &[0.0, 0.1], &[0.0, 0.05], &PowerFlowOptions::default()).unwrap();
        let u = two_bus_root(0.05, 0.05, 0.1, 0.05);
        assert!((st.v_sq[1] - u).abs() < 1e-10, "{} vs {u}", st.v_sq[1]);
        assert!((st.i_sq[0] - (0.1f64.powi(2) + 0.05f64.powi(2)) / u).abs() < 1e-10);
    }

    #[test]
    fn converged_state_satisfies_branch_flow() {
        let net = feeder(
            vec![(0, 1, 0.02, 0.04), (1, 2, 0.03, 0.02), (1, 3, 0.05, 0.03), (3, 4, 0.04, 0.04)],
            5,
        );
        let p = [0.0, 0.2, 0.3, 0.1, 0.25];
        let q = [0.0, 0.1, 0.1, 0.05, 0.1];
        let st = power_flow_period(&net, &p, &q, &PowerFlowOptions::default()).unwrap();
        assert!(branch_flow_residual(&net, &p, &q, &st) <= 1e-8);
    }

    #[test]
    fn collapse_is_reported() {
        let net = feeder(vec![(0, 1, 0.5, 0.5)], 2);
        let err = power_flow_period(&net, &[0.0, 5.0], &[0.0, 5.0], &PowerFlowOptions::default()).unwrap_err();
        assert!(matches!(err, PowerFlowError::Collapse { .. } | PowerFlowError::NoConvergence { .. }));
    }
}
