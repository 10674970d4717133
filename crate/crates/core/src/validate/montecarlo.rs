//! Monte-Carlo validation of flexibility areas.
//!
//! Every simulation draws, for each period and pool, a consumption uniformly
//! in the pool's area, adds the base demand and runs the sweep power flow
//! with limits unenforced. Simulation `k` uses its own keyed random stream
//! and always consumes `periods × pools` uniforms in the same order, so two
//! validations with the same seed but different areas see the same random
//! numbers: a wider area can only raise each draw.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::powerflow::{period_loads, power_flow_period, PowerFlowOptions};
use crate::flexarea::FlexibilityArea;
use crate::netmodel::{ChargingPoolSpec, NetworkModel};
use crate::rng::{keyed_stream, Field};

/// Slack on the limits when counting violations, pu (voltage) and per unit
/// of the cap (current); absorbs solver-level noise in the areas.
pub const LIMIT_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ValidateError {
    #[error("areas do not cover pool {pool} period {period}")]
    MissingArea { pool: usize, period: usize },
    #[error("area of pool {pool} period {period} has upper < lower")]
    InvertedArea { pool: usize, period: usize },
    #[error("simulation count must be at least 1")]
    NoSims,
}

/// `[pool][period]` bounds in kW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaGrid {
    pub lower_kw: Vec<Vec<f64>>,
    pub upper_kw: Vec<Vec<f64>>,
}

impl AreaGrid {
    pub fn from_areas(areas: &[FlexibilityArea], pools: usize, periods: usize) -> Result<Self, ValidateError> {
        let mut lower = vec![vec![f64::NAN; periods]; pools];
        let mut upper = vec![vec![f64::NAN; periods]; pools];
        for a in areas {
            if a.pool < pools && a.period < periods {
                lower[a.pool][a.period] = a.lower_kw;
                upper[a.pool][a.period] = a.upper_kw;
            }
        }
        for s in 0..pools {
            for t in 0..periods {
                if lower[s][t].is_nan() {
                    return Err(ValidateError::MissingArea { pool: s, period: t });
                }
                if upper[s][t] < lower[s][t] {
                    return Err(ValidateError::InvertedArea { pool: s, period: t });
                }
            }
        }
        Ok(Self { lower_kw: lower, upper_kw: upper })
    }
}

/// Per-period extremes of one simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub sim: usize,
    /// False when the power flow failed in some period.
    pub converged: bool,
    /// Lowest node voltage per period, pu.
    pub min_v: Vec<f64>,
    /// Highest branch current per period, pu.
    pub max_i: Vec<f64>,
    /// Highest `I / I_max` per period.
    pub max_loading: Vec<f64>,
}

/// Runs simulation `sim`.
pub fn mc_simulation(
    net: &NetworkModel,
    pool_nodes: &[usize],
    grid: &AreaGrid,
    sim: usize,
    seed: u64,
    options: &PowerFlowOptions,
) -> SimOutcome {
    let periods = net.periods();
    let mut rng = keyed_stream(seed, sim as u64, 0, Field::MonteCarlo);
    let draws: Vec<Vec<f64>> = (0..periods)
        .map(|_| (0..pool_nodes.len()).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut out = SimOutcome {
        sim,
        converged: true,
        min_v: vec![f64::NAN; periods],
        max_i: vec![f64::NAN; periods],
        max_loading: vec![f64::NAN; periods],
    };
    for t in 0..periods {
        let kw: Vec<f64> = (0..pool_nodes.len())
            .map(|s| {
                let (lo, hi) = (grid.lower_kw[s][t], grid.upper_kw[s][t]);
                lo + draws[t][s] * (hi - lo)
            })
            .collect();
        let (p, q) = period_loads(net, pool_nodes, &kw, t);
        match power_flow_period(net, &p, &q, options) {
            Ok(st) => {
                out.min_v[t] = st.min_voltage();
                out.max_i[t] = st.max_current();
                out.max_loading[t] = st.max_loading(net);
            }
            Err(_) => {
                out.converged = false;
                return out;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut sum, mut lo, mut hi) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            n += 1;
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if n == 0 {
            return Self { mean: f64::NAN, min: f64::NAN, max: f64::NAN };
        }
        Self { mean: sum / n as f64, min: lo, max: hi }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodSummary {
    pub period: usize,
    pub min_v: Stat,
    pub max_i: Stat,
    pub max_loading: Stat,
    pub voltage_violation_freq: f64,
    pub current_violation_freq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sims: usize,
    pub seed: u64,
    /// Risk levels used for the areas, if uniform.
    pub beta: Option<f64>,
    pub v_min: f64,
    /// Simulations whose power flow failed; excluded from the statistics.
    pub failed_sims: usize,
    /// Fraction of simulations with any period below `v_min`.
    pub voltage_violation_freq: f64,
    /// Fraction of simulations with any branch above its cap.
    pub current_violation_freq: f64,
    /// Fraction with either.
    pub violation_freq: f64,
    pub periods: Vec<PeriodSummary>,
    /// Raw per-simulation extremes in simulation order.
    pub outcomes: Vec<SimOutcome>,
}

/// Statistics over simulation outcomes given in simulation order.
pub fn aggregate(
    net: &NetworkModel,
    outcomes: Vec<SimOutcome>,
    seed: u64,
    beta: Option<f64>,
) -> ValidationReport {
    let periods = net.periods();
    let v_floor = net.v_min() - LIMIT_SLACK;
    let i_ceil = 1.0 + LIMIT_SLACK;
    let ok: Vec<&SimOutcome> = outcomes.iter().filter(|o| o.converged).collect();
    let denom = ok.len().max(1) as f64;
    let v_bad = |o: &SimOutcome, t: usize| o.min_v[t] < v_floor;
    let i_bad = |o: &SimOutcome, t: usize| o.max_loading[t] > i_ceil;
    let count = |f: &dyn Fn(&SimOutcome) -> bool| ok.iter().filter(|o| f(o)).count() as f64 / denom;

    let summaries = (0..periods)
        .map(|t| PeriodSummary {
            period: t,
            min_v: Stat::of(ok.iter().map(|o| o.min_v[t])),
            max_i: Stat::of(ok.iter().map(|o| o.max_i[t])),
            max_loading: Stat::of(ok.iter().map(|o| o.max_loading[t])),
            voltage_violation_freq: count(&|o| v_bad(o, t)),
            current_violation_freq: count(&|o| i_bad(o, t)),
        })
        .collect();
    ValidationReport {
        sims: outcomes.len(),
        seed,
        beta,
        v_min: net.v_min(),
        failed_sims: outcomes.len() - ok.len(),
        voltage_violation_freq: count(&|o| (0..periods).any(|t| v_bad(o, t))),
        current_violation_freq: count(&|o| (0..periods).any(|t| i_bad(o, t))),
        violation_freq: count(&|o| (0..periods).any(|t| v_bad(o, t) || i_bad(o, t))),
        periods: summaries,
        outcomes,
    }
}

fn uniform_beta(areas: &[FlexibilityArea]) -> Option<f64> {
    let first = areas.first()?.beta;
    areas.iter().all(|a| a.beta == first).then_some(first)
}

/// Sequential Monte-Carlo validation.
pub fn mc_validate(
    net: &NetworkModel,
    pools: &[ChargingPoolSpec],
    areas: &[FlexibilityArea],
    sims: usize,
    seed: u64,
) -> Result<ValidationReport, ValidateError> {
    if sims == 0 {
        return Err(ValidateError::NoSims);
    }
    let grid = AreaGrid::from_areas(areas, pools.len(), net.periods())?;
    let nodes: Vec<usize> = pools.iter().map(|p| p.node).collect();
    let options = PowerFlowOptions::default();
    let outcomes = (0..sims).map(|k| mc_simulation(net, &nodes, &grid, k, seed, &options)).collect();
    Ok(aggregate(net, outcomes, seed, uniform_beta(areas)))
}
