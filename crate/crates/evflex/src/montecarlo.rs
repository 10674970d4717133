//! Parallel Monte-Carlo validation. Each simulation owns a keyed random
//! stream, so results do not depend on the thread count.

use evflex_core::netmodel::{ChargingPoolSpec, NetworkModel};
use evflex_core::validate::{aggregate, mc_simulation, AreaGrid, PowerFlowOptions, ValidateError, ValidationReport};
use evflex_core::FlexibilityArea;
use rayon::prelude::*;

pub fn validate_areas(
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
    let outcomes = (0..sims)
        .into_par_iter()
        .map(|k| mc_simulation(net, &nodes, &grid, k, seed, &options))
        .collect();
    let beta = areas.first().map(|a| a.beta).filter(|b| areas.iter().all(|a| a.beta == *b));
    Ok(aggregate(net, outcomes, seed, beta))
}

/// `(value, cumulative)` pairs of the empirical distribution of `values`.
pub fn ecdf_points(values: impl IntoIterator<Item = f64>) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().map(|(k, &x)| (x, (k + 1) as f64 / n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ecdf_points_are_sorted_and_end_at_one() {
        let pts = ecdf_points([3.0, f64::NAN, 1.0, 2.0]);
        assert_eq!(pts, vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
    }
}
