//! Settlement of flexibility areas on fresh scenarios.
//!
//! The area upper bounds become the pool power limits. Every scenario is
//! then operated on its own with the flexibility model, network limits
//! enforced, and the resulting deliveries and unserved energy are settled.

use evflex_core::conic::ConicBackend;
use evflex_core::netmodel::{ChargingPoolSpec, NetworkModel};
use evflex_core::scenario::ScenarioSet;
use evflex_core::sopf::{BuildOptions, ModelMode};
use evflex_core::validate::{payment_analysis, payment_scenarios, AreaGrid, PaymentReport, PaymentScenario};
use evflex_core::{build_sopf, extract_solution, solve_misocp, FlexibilityArea, SolverOptions};
use rayon::prelude::*;

use crate::error::RunError;

/// Pools with their capacity replaced by the area upper bounds.
pub fn capped_pools(
    pools: &[ChargingPoolSpec],
    areas: &[FlexibilityArea],
    periods: usize,
) -> Result<Vec<ChargingPoolSpec>, RunError> {
    let grid = AreaGrid::from_areas(areas, pools.len(), periods)?;
    Ok(pools
        .iter()
        .zip(&grid.upper_kw)
        .map(|(p, upper)| ChargingPoolSpec { p_max_kw: upper.iter().map(|u| u.max(0.0)).collect(), ..p.clone() })
        .collect())
}

/// Operates one scenario under capped pools.
pub fn operate_scenario<B: ConicBackend>(
    net: &NetworkModel,
    capped: &[ChargingPoolSpec],
    set: &ScenarioSet,
    scenario: usize,
    build: &BuildOptions,
    solver: &SolverOptions,
    backend: &B,
) -> Result<PaymentScenario, RunError> {
    let stage = "payment";
    let single = set.subset(&[scenario]);
    let build = BuildOptions { mode: ModelMode::Flex, ..build.clone() };
    let prog = build_sopf(net, capped, &single, &build).map_err(|source| RunError::Build { stage, source })?;
    let (x, report) = solve_misocp(backend, &prog, solver).map_err(|source| RunError::Solve { stage, source })?;
    let sol = extract_solution(&prog, &x, &report).map_err(|source| RunError::Extract { stage, source })?;
    Ok(payment_scenarios(&sol).swap_remove(0))
}

pub fn settle_areas<B: ConicBackend + Sync>(
    net: &NetworkModel,
    pools: &[ChargingPoolSpec],
    areas: &[FlexibilityArea],
    set: &ScenarioSet,
    build: &BuildOptions,
    solver: &SolverOptions,
    backend: &B,
) -> Result<PaymentReport, RunError> {
    let capped = capped_pools(pools, areas, net.periods())?;
    let operated: Vec<PaymentScenario> = (0..set.count)
        .into_par_iter()
        .map(|w| operate_scenario(net, &capped, set, w, build, solver, backend))
        .collect::<Result<_, _>>()?;
    Ok(payment_analysis(pools, &operated)?)
}
