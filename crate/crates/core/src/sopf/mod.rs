//! Two-stage stochastic branch-flow OPF.
//!
//! [`build_sopf`] assembles, for every pool `s`, period `t` and scenario
//! `w`:
//!
//! ```text
//! p[s,t] + rho[s,t,w] = Σ_n x[n,t,w]                    pool balance
//! p[s,t] + rho[s,t,w] ≤ p_max[s,t],  p, rho ≥ 0          pool capacity
//! 0 ≤ x[n,t,w] ≤ x_max[n]   only for a ≤ t < d          task power
//! Σ_t x[n,t,w] Δt + phi[n,w] = E[n,w]                    task energy
//! Phi[s,w] = Σ_n phi[n,w]                                 pool ENS
//! Z[s,w] = u_s(Phi[s,w])                                  utility encoding
//! ```
//!
//! and the branch-flow model per `(t, w)` with receiving-end flows:
//!
//! ```text
//! Σ_parent P − Σ_child (P + R I²) = P_D + Σ_{s at i} (p + rho)   i ≠ substation
//! Σ_parent Q − Σ_child (Q + X I²) = Q_D
//! V²_j = V²_i − 2(R P + X Q) − (R² + X²) I²                     branch i→j
//! V²_j · I² ≥ P² + Q²                                           rotated cone
//! V_min² ≤ V² ≤ V_max²,  V²_sub fixed,  0 ≤ I² ≤ I_max²
//! ```
//!
//! Pool quantities are in kW / kWh and enter the network rows through
//! `S_base`. The objective is
//!
//! ```text
//! Σ_w π_w Σ_s Z[s,w] − Σ_{s,t} c[s,t] p[s,t] Δt + Σ_w π_w Σ_{b,t} ℓ S_base Δt R_b I²[b,t,w]
//! ```
//!
//! where the last term prices network losses at `ℓ` per kWh
//! ([`BuildOptions::loss_price`]). Without it the objective is flat along
//! the cone slack and an interior-point solution need not be tight.
//!
//! # Variable count
//!
//! Variables are only created for periods in which a task is plugged in,
//! so the program has
//!
//! ```text
//!   S·T                         p
//! + S·T·W                       rho
//! + Σ_{n,w} (d[n,w] − a[n,w])   x
//! + N·W                         phi
//! + Σ_s W·(2 + 2κ_s + 1 + κ_s)  Phi, Z, λ̲, λ̄, y
//! + T·W·(|nodes| + 3|branches|) V², I², P, Q
//! ```
//!
//! variables in flexibility mode (no `y` for pools built without binaries).
//! Cones number `|branches|·T·W`.

pub mod program;
mod solution;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{ChargingPoolSpec, NetworkError, NetworkModel};
use crate::scenario::ScenarioSet;
use crate::utility::{encode_utility, is_convex_shortcut_eligible};

pub use program::{ConicProgram, ProgramDefect, RotatedCone, Row, RowTag, Sense, VarKey, VarKind};
pub use solution::{extract_solution, extract_solution_with, ExtractError, ExtractOptions, SolutionStatus, SopfSolution};

/// Which variant of the model to assemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelMode {
    /// Full flexibility model.
    Flex,
    /// Uncontrolled reference: limits widened, every task fully served as
    /// early as possible, no reserve.
    Base,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub mode: ModelMode,
    /// Price on network losses, currency per kWh.
    pub loss_price: f64,
    /// Drop the segment binaries of pools whose utility is convex and
    /// nondecreasing.
    pub convex_shortcut: bool,
    /// Voltage box used by the base case, pu.
    pub base_voltage_limits: (f64, f64),
    /// Current caps in the base case are multiplied by this factor.
    pub base_current_factor: f64,
    /// Scale of the earliest-period preference in the base case, relative
    /// to the largest energy price.
    pub asap_weight: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            mode: ModelMode::Flex,
            loss_price: 1e-3,
            convex_shortcut: true,
            base_voltage_limits: (0.5, 1.5),
            base_current_factor: 10.0,
            asap_weight: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum BuildError {
    #[error(transparent)]
    Pool(#[from] NetworkError),
    #[error("scenario horizon {scenarios} does not match network periods {network}")]
    HorizonMismatch { scenarios: usize, network: usize },
    #[error("scenario period length {scenarios} h does not match network {network} h")]
    PeriodLengthMismatch { scenarios: f64, network: f64 },
    #[error("scenario set lists {scenarios} tasks, pools define {pools}")]
    TaskMismatch { scenarios: usize, pools: usize },
    #[error("task {task} in scenario {scenario} lies outside the horizon")]
    TaskOutsideHorizon { task: String, scenario: usize },
    #[error("option {0} is out of range")]
    InvalidOption(&'static str),
}

/// Where each model quantity lives in the variable vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SopfLayout {
    pub mode: ModelMode,
    pub pools: usize,
    pub periods: usize,
    pub scenarios: usize,
    pub nodes: usize,
    pub branches: usize,
    pub delta_t: f64,
    /// kW per pu.
    pub s_base_kw: f64,
    pub probabilities: Vec<f64>,
    /// `[s][t]`
    pub reserve: Vec<Vec<usize>>,
    /// `[s][t][w]`
    pub mismatch: Vec<Vec<Vec<usize>>>,
    /// Pool of every task.
    pub task_pool: Vec<usize>,
    /// `[n][w]`: first period and one variable per plugged-in period.
    pub task_power: Vec<Vec<(usize, Vec<usize>)>>,
    /// Requested energy `[n][w]`, kWh.
    pub task_energy: Vec<Vec<f64>>,
    /// `[n][w]`
    pub task_ens: Vec<Vec<usize>>,
    /// `[s][w]`
    pub pool_ens: Vec<Vec<usize>>,
    /// `[s][w]`; `None` when the pool carries no utility (base case).
    pub pool_cost: Vec<Vec<Option<usize>>>,
    /// Task-energy row indices of each pool, in build order.
    pub energy_rows: Vec<Vec<usize>>,
    /// `[i][t][w]`
    pub voltage_sq: Vec<Vec<Vec<usize>>>,
    /// `[b][t][w]`
    pub current_sq: Vec<Vec<Vec<usize>>>,
    pub flow_p: Vec<Vec<Vec<usize>>>,
    pub flow_q: Vec<Vec<Vec<usize>>>,
    /// `[b][t][w]`
    pub cone: Vec<Vec<Vec<usize>>>,
    /// Voltage and current limits actually imposed, pu.
    pub v_min: f64,
    pub v_max: f64,
    pub v_substation: f64,
    pub substation: usize,
    pub current_cap: Vec<f64>,
}

impl SopfLayout {
    fn new(net: &NetworkModel, pools: usize, set: &ScenarioSet, mode: ModelMode) -> Self {
        let (t, w) = (net.periods(), set.count);
        let grid = |outer: usize| vec![vec![vec![usize::MAX; w]; t]; outer];
        Self {
            mode,
            pools,
            periods: t,
            scenarios: w,
            nodes: net.node_count(),
            branches: net.branches().len(),
            delta_t: net.delta_t(),
            s_base_kw: net.base().s_base_kw(),
            probabilities: set.probabilities.clone(),
            reserve: vec![vec![usize::MAX; t]; pools],
            mismatch: grid(pools),
            task_pool: set.tasks.iter().map(|r| r.pool).collect(),
            task_power: vec![Vec::with_capacity(w); set.task_count()],
            task_energy: vec![Vec::with_capacity(w); set.task_count()],
            task_ens: vec![vec![usize::MAX; w]; set.task_count()],
            pool_ens: vec![vec![usize::MAX; w]; pools],
            pool_cost: vec![vec![None; w]; pools],
            energy_rows: vec![Vec::new(); pools],
            voltage_sq: grid(net.node_count()),
            current_sq: grid(net.branches().len()),
            flow_p: grid(net.branches().len()),
            flow_q: grid(net.branches().len()),
            cone: grid(net.branches().len()),
            v_min: net.v_min(),
            v_max: net.v_max(),
            v_substation: net.v_substation(),
            substation: net.substation(),
            current_cap: net.branches().iter().map(|b| b.current_cap).collect(),
        }
    }
}

fn check_inputs(
    net: &NetworkModel,
    pools: &[ChargingPoolSpec],
    set: &ScenarioSet,
    options: &BuildOptions,
) -> Result<(), BuildError> {
    if set.horizon != net.periods() {
        return Err(BuildError::HorizonMismatch { scenarios: set.horizon, network: net.periods() });
    }
    if (set.delta_t - net.delta_t()).abs() > 1e-12 {
        return Err(BuildError::PeriodLengthMismatch { scenarios: set.delta_t, network: net.delta_t() });
    }
    for pool in pools {
        pool.validate(net)?;
    }
    let expected: Vec<(&str, &str)> = pools
        .iter()
        .flat_map(|p| p.tasks.iter().map(move |t| (p.pool_id.as_str(), t.task_id.as_str())))
        .collect();
    let listed: Vec<(&str, &str)> =
        set.tasks.iter().map(|t| (t.pool_id.as_str(), t.task_id.as_str())).collect();
    if expected != listed || set.realizations.len() != listed.len() {
        return Err(BuildError::TaskMismatch { scenarios: listed.len(), pools: expected.len() });
    }
    for (n, per_scenario) in set.realizations.iter().enumerate() {
        if per_scenario.len() != set.count {
            return Err(BuildError::TaskMismatch { scenarios: listed.len(), pools: expected.len() });
        }
        for (w, r) in per_scenario.iter().enumerate() {
            if !(r.arrival < r.departure && r.departure <= net.periods()) || !(r.energy_kwh >= 0.0) {
                return Err(BuildError::TaskOutsideHorizon { task: set.tasks[n].task_id.clone(), scenario: w });
            }
        }
    }
    if !(options.loss_price >= 0.0 && options.loss_price.is_finite()) {
        return Err(BuildError::InvalidOption("loss_price"));
    }
    if !(options.asap_weight >= 0.0 && options.asap_weight.is_finite()) {
        return Err(BuildError::InvalidOption("asap_weight"));
    }
    let (lo, hi) = options.base_voltage_limits;
    if options.mode == ModelMode::Base && !(lo > 0.0 && lo < net.v_substation() && hi >= net.v_substation()) {
        return Err(BuildError::InvalidOption("base_voltage_limits"));
    }
    if options.mode == ModelMode::Base && !(options.base_current_factor >= 1.0) {
        return Err(BuildError::InvalidOption("base_current_factor"));
    }
    Ok(())
}

/// Assembles the stochastic OPF. See the module documentation for the
/// model and the variable count.
pub fn build_sopf(
    net: &NetworkModel,
    pools: &[ChargingPoolSpec],
    set: &ScenarioSet,
    options: &BuildOptions,
) -> Result<ConicProgram, BuildError> {
    check_inputs(net, pools, set, options)?;
    let base = options.mode == ModelMode::Base;
    let periods = net.periods();
    let dt = net.delta_t();
    let s_base_kw = net.base().s_base_kw();
    let kw = 1.0 / s_base_kw;
    let mut layout = SopfLayout::new(net, pools.len(), set, options.mode);
    let mut prog = ConicProgram::new();

    let (v_min, v_max) = if base { options.base_voltage_limits } else { (net.v_min(), net.v_max()) };
    let cap_factor = if base { options.base_current_factor } else { 1.0 };
    layout.v_min = v_min;
    layout.v_max = v_max;
    for c in &mut layout.current_cap {
        *c *= cap_factor;
    }
    let max_price = pools
        .iter()
        .flat_map(|p| p.energy_price.iter().copied())
        .fold(0.0, f64::max)
        .max(1.0);
    let asap = options.asap_weight * max_price;

    // First stage. The base case has no reserve.
    for (s, pool) in pools.iter().enumerate() {
        for t in 0..periods {
            // p ≤ p_max follows from the capacity rows; the explicit bound
            // keeps the program well scaled.
            let up = if base { 0.0 } else { pool.p_max_kw[t] };
            let p = prog.add_continuous(VarKey::Reserve { pool: s as u32, period: t as u32 }, 0.0, up);
            if !base {
                prog.add_cost(p, -pool.energy_price[t] * dt);
            }
            layout.reserve[s][t] = p;
        }
    }

    let node_pools: Vec<Vec<usize>> = (0..net.node_count())
        .map(|i| (0..pools.len()).filter(|&s| pools[s].node == i).collect())
        .collect();
    let topo = net.topology();
    let substation = net.substation();

    for w in 0..set.count {
        let pi = set.probabilities[w];
        let wk = w as u32;

        // Charging pools.
        for (s, pool) in pools.iter().enumerate() {
            let sk = s as u32;
            let mut period_tasks: Vec<Vec<usize>> = vec![Vec::new(); periods];
            let mut ens = Vec::new();
            for n in set.tasks_of_pool(s) {
                let r = set.realizations[n][w];
                let x_max = set.tasks[n].x_max_kw;
                let vars: Vec<usize> = (r.arrival..r.departure)
                    .map(|t| {
                        let x = prog.add_continuous(
                            VarKey::TaskPower { task: n as u32, period: t as u32, scenario: wk },
                            0.0,
                            x_max,
                        );
                        if base {
                            prog.add_cost(x, -asap * (periods - t) as f64 * pi * dt);
                        }
                        period_tasks[t].push(x);
                        x
                    })
                    .collect();
                let phi_up = if base { 0.0 } else { r.energy_kwh };
                let phi = prog.add_continuous(VarKey::TaskEns { task: n as u32, scenario: wk }, 0.0, phi_up);
                let mut coeffs: Vec<(usize, f64)> = vars.iter().map(|&x| (x, dt)).collect();
                coeffs.push((phi, 1.0));
                let row = prog.add_row(
                    RowTag::TaskEnergy { task: n as u32, scenario: wk },
                    coeffs,
                    Sense::Eq,
                    r.energy_kwh,
                );
                layout.energy_rows[s].push(row);
                layout.task_power[n].push((r.arrival, vars));
                layout.task_energy[n].push(r.energy_kwh);
                layout.task_ens[n][w] = phi;
                ens.push(phi);
            }

            let p_max: Vec<f64> = if base {
                pool.p_max_kw.iter().map(|&p| p.max(pool.task_power_sum_kw())).collect()
            } else {
                pool.p_max_kw.clone()
            };
            for t in 0..periods {
                let rho = prog.add_continuous(
                    VarKey::Mismatch { pool: sk, period: t as u32, scenario: wk },
                    0.0,
                    p_max[t],
                );
                layout.mismatch[s][t][w] = rho;
                let p = layout.reserve[s][t];
                let mut coeffs = vec![(p, 1.0), (rho, 1.0)];
                coeffs.extend(period_tasks[t].iter().map(|&x| (x, -1.0)));
                prog.add_row(
                    RowTag::PoolBalance { pool: sk, period: t as u32, scenario: wk },
                    coeffs,
                    Sense::Eq,
                    0.0,
                );
                prog.add_row(
                    RowTag::PoolCapacity { pool: sk, period: t as u32, scenario: wk },
                    vec![(p, 1.0), (rho, 1.0)],
                    Sense::Le,
                    p_max[t],
                );
            }

            let phi_total = if base {
                prog.add_continuous(VarKey::PoolEns { pool: sk, scenario: wk }, 0.0, 0.0)
            } else {
                let binaries = !(options.convex_shortcut && is_convex_shortcut_eligible(&pool.utility));
                let enc = encode_utility(&pool.utility, s, w, &mut prog, binaries);
                prog.add_cost(enc.cost, pi);
                layout.pool_cost[s][w] = Some(enc.cost);
                enc.phi
            };
            layout.pool_ens[s][w] = phi_total;
            let mut coeffs = vec![(phi_total, 1.0)];
            coeffs.extend(ens.iter().map(|&phi| (phi, -1.0)));
            prog.add_row(RowTag::PoolEnsSum { pool: sk, scenario: wk }, coeffs, Sense::Eq, 0.0);
        }

        // Network.
        for t in 0..periods {
            let tk = t as u32;
            for i in 0..net.node_count() {
                let (lo, hi) = if i == substation {
                    let v = net.v_substation() * net.v_substation();
                    (v, v)
                } else {
                    (v_min * v_min, v_max * v_max)
                };
                layout.voltage_sq[i][t][w] =
                    prog.add_continuous(VarKey::VoltageSq { node: i as u32, period: tk, scenario: wk }, lo, hi);
            }
            for (b, branch) in net.branches().iter().enumerate() {
                let bk = b as u32;
                let cap = branch.current_cap * cap_factor;
                let isq = prog.add_continuous(
                    VarKey::CurrentSq { branch: bk, period: tk, scenario: wk },
                    0.0,
                    cap * cap,
                );
                let inf = f64::INFINITY;
                let p = prog.add_continuous(VarKey::FlowP { branch: bk, period: tk, scenario: wk }, -inf, inf);
                let q = prog.add_continuous(VarKey::FlowQ { branch: bk, period: tk, scenario: wk }, -inf, inf);
                if !base && options.loss_price > 0.0 {
                    prog.add_cost(isq, pi * options.loss_price * s_base_kw * dt * branch.resistance);
                }
                layout.current_sq[b][t][w] = isq;
                layout.flow_p[b][t][w] = p;
                layout.flow_q[b][t][w] = q;
            }
            for i in 0..net.node_count() {
                if i == substation {
                    continue;
                }
                let ik = i as u32;
                let parent = topo.parent_branch[i].expect("non-substation node has a parent");
                let mut pa = vec![(layout.flow_p[parent][t][w], 1.0)];
                let mut qa = vec![(layout.flow_q[parent][t][w], 1.0)];
                for &c in &topo.child_branches[i] {
                    let br = &net.branches()[c];
                    pa.push((layout.flow_p[c][t][w], -1.0));
                    qa.push((layout.flow_q[c][t][w], -1.0));
                    if br.resistance != 0.0 {
                        pa.push((layout.current_sq[c][t][w], -br.resistance));
                    }
                    if br.reactance != 0.0 {
                        qa.push((layout.current_sq[c][t][w], -br.reactance));
                    }
                }
                for &s in &node_pools[i] {
                    pa.push((layout.reserve[s][t], -kw));
                    pa.push((layout.mismatch[s][t][w], -kw));
                }
                prog.add_row(
                    RowTag::ActiveBalance { node: ik, period: tk, scenario: wk },
                    pa,
                    Sense::Eq,
                    net.base_demand_p(i, t),
                );
                prog.add_row(
                    RowTag::ReactiveBalance { node: ik, period: tk, scenario: wk },
                    qa,
                    Sense::Eq,
                    net.base_demand_q(i, t),
                );
            }
            for (b, br) in net.branches().iter().enumerate() {
                let (r, x) = (br.resistance, br.reactance);
                let vj = layout.voltage_sq[br.to][t][w];
                let vi = layout.voltage_sq[br.from][t][w];
                let isq = layout.current_sq[b][t][w];
                prog.add_row(
                    RowTag::VoltageDrop { branch: b as u32, period: tk, scenario: wk },
                    vec![
                        (vj, 1.0),
                        (vi, -1.0),
                        (layout.flow_p[b][t][w], 2.0 * r),
                        (layout.flow_q[b][t][w], 2.0 * x),
                        (isq, r * r + x * x),
                    ],
                    Sense::Eq,
                    0.0,
                );
                layout.cone[b][t][w] =
                    prog.add_cone(vj, isq, vec![layout.flow_p[b][t][w], layout.flow_q[b][t][w]]);
            }
        }
    }

    prog.layout = Some(layout);
    Ok(prog)
}

/// Uncontrolled reference case: voltage and current limits widened to
/// [`BuildOptions::base_voltage_limits`] / [`BuildOptions::base_current_factor`],
/// pool connection caps raised to the sum of task powers, all energy served
/// (`phi = 0`), no reserve, and a small objective weight `ε (T − t)` per kW
/// with `ε = asap_weight · max price` that charges every task as early as
/// possible.
pub fn base_case_program(
    net: &NetworkModel,
    pools: &[ChargingPoolSpec],
    set: &ScenarioSet,
) -> Result<ConicProgram, BuildError> {
    let options = BuildOptions { mode: ModelMode::Base, ..BuildOptions::default() };
    build_sopf(net, pools, set, &options)
}
