//! Pool payments: revenue from delivered energy minus compensation for
//! energy not served.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::ChargingPoolSpec;
use crate::sopf::SopfSolution;
use crate::utility::UtilityError;

/// Energy-not-served values within this distance of a breakpoint (or of 0)
/// are evaluated on it, kWh.
pub const SETTLE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PaymentError {
    #[error("pool {pool}: {source}")]
    Utility { pool: usize, source: UtilityError },
    #[error("scenario {scenario} does not match the pool set")]
    Shape { scenario: usize },
    #[error("no scenarios to analyse")]
    Empty,
}

/// Operation of all pools in one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaymentScenario {
    /// Energy delivered `[pool][period]`, kWh.
    pub delivered_kwh: Vec<Vec<f64>>,
    /// Energy not served per pool, kWh.
    pub ens_kwh: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPayment {
    pub pool_revenue: Vec<f64>,
    pub pool_cost: Vec<f64>,
    pub revenue: f64,
    pub cost: f64,
    /// `revenue − cost`
    pub total: f64,
}

/// Order statistics with linear interpolation between closest ranks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub p05: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p95: f64,
    pub max: f64,
}

/// Quantile `q` of sorted data, `h = (n − 1) q` interpolation.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl DistributionSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            p05: quantile_sorted(&v, 0.05),
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            p95: quantile_sorted(&v, 0.95),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaymentReport {
    pub scenarios: Vec<ScenarioPayment>,
    pub total: DistributionSummary,
    /// Per-pool distribution of `revenue − cost`.
    pub pools: Vec<DistributionSummary>,
}

pub fn payment_analysis(
    pools: &[ChargingPoolSpec],
    scenarios: &[PaymentScenario],
) -> Result<PaymentReport, PaymentError> {
    if scenarios.is_empty() {
        return Err(PaymentError::Empty);
    }
    let mut out = Vec::with_capacity(scenarios.len());
    for (w, sc) in scenarios.iter().enumerate() {
        if sc.delivered_kwh.len() != pools.len() || sc.ens_kwh.len() != pools.len() {
            return Err(PaymentError::Shape { scenario: w });
        }
        let mut pool_revenue = Vec::with_capacity(pools.len());
        let mut pool_cost = Vec::with_capacity(pools.len());
        for (s, pool) in pools.iter().enumerate() {
            if sc.delivered_kwh[s].len() != pool.energy_price.len() {
                return Err(PaymentError::Shape { scenario: w });
            }
            let revenue: f64 = pool.energy_price.iter().zip(&sc.delivered_kwh[s]).map(|(c, e)| c * e).sum();
            let cost = pool
                .utility
                .settle(sc.ens_kwh[s], SETTLE_TOL)
                .map_err(|source| PaymentError::Utility { pool: s, source })?;
            pool_revenue.push(revenue);
            pool_cost.push(cost);
        }
        let revenue: f64 = pool_revenue.iter().sum();
        let cost: f64 = pool_cost.iter().sum();
        out.push(ScenarioPayment { pool_revenue, pool_cost, revenue, cost, total: revenue - cost });
    }
    let totals: Vec<f64> = out.iter().map(|p| p.total).collect();
    let per_pool = (0..pools.len())
        .map(|s| {
            let v: Vec<f64> = out.iter().map(|p| p.pool_revenue[s] - p.pool_cost[s]).collect();
            DistributionSummary::of(&v).expect("nonempty")
        })
        .collect();
    Ok(PaymentReport { total: DistributionSummary::of(&totals).expect("nonempty"), pools: per_pool, scenarios: out })
}

/// Payment inputs for every scenario of a solution.
pub fn payment_scenarios(solution: &SopfSolution) -> Vec<PaymentScenario> {
    let pools = solution.reserve_kw.len();
    (0..solution.scenarios)
        .map(|w| {
            let mut delivered = alloc::vec![alloc::vec![0.0; solution.periods]; pools];
            for (n, &s) in solution.task_pool.iter().enumerate() {
                for (t, &x) in solution.task_power_kw[n][w].iter().enumerate() {
                    delivered[s][t] += x * solution.delta_t;
                }
            }
            PaymentScenario { delivered_kwh: delivered, ens_kwh: (0..pools).map(|s| solution.pool_ens_kwh[s][w]).collect() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::UtilityFunction;
    use alloc::vec;

    fn pool(utility: UtilityFunction) -> ChargingPoolSpec {
        ChargingPoolSpec {
            pool_id: "cp".into(),
            node: 1,
            p_max_kw: vec![100.0; 2],
            energy_price: vec![0.2; 2],
            utility,
            tasks: vec![],
        }
    }

    fn jumpy() -> UtilityFunction {
        UtilityFunction::new(vec![0.0, 50.0, 150.0], vec![0.3, 0.15], vec![2.0, 9.5]).unwrap()
    }

    #[test]
    fn no_ens_means_revenue_only() {
        let sc = PaymentScenario { delivered_kwh: vec![vec![3.0, 7.0]], ens_kwh: vec![0.0] };
        let r = payment_analysis(&[pool(jumpy())], &[sc]).unwrap();
        assert_eq!(r.scenarios[0].total, r.scenarios[0].revenue);
        assert_eq!(r.scenarios[0].cost, 0.0);
    }

    #[test]
    fn ten_kwh_at_twenty_cents() {
        let sc = PaymentScenario { delivered_kwh: vec![vec![10.0, 0.0]], ens_kwh: vec![0.0] };
        let r = payment_analysis(&[pool(jumpy())], &[sc]).unwrap();
        assert!((r.scenarios[0].total - 2.0).abs() < 1e-15);
    }

    #[test]
    fn ens_at_first_breakpoint_costs_first_segment_value() {
        let u = jumpy();
        let f1 = u.segment_value(1, 50.0);
        let sc = PaymentScenario { delivered_kwh: vec![vec![10.0, 10.0]], ens_kwh: vec![50.0] };
        let r = payment_analysis(&[pool(u)], &[sc]).unwrap();
        assert!((r.scenarios[0].total - (4.0 - f1)).abs() < 1e-12);
    }

    #[test]
    fn ens_outside_domain_is_an_error() {
        let sc = PaymentScenario { delivered_kwh: vec![vec![0.0, 0.0]], ens_kwh: vec![151.0] };
        assert!(matches!(payment_analysis(&[pool(jumpy())], &[sc]), Err(PaymentError::Utility { .. })));
    }

    #[test]
    fn quantiles_interpolate() {
        let s = DistributionSummary::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.q3, 4.0);
        assert!((s.p05 - 1.2).abs() < 1e-12);
        assert!((s.p95 - 4.8).abs() < 1e-12);
    }
}
