//! Flexibility areas from the scenario distribution of the mismatch power.
//!
//! For pool `s` and period `t` the area is `[p*, p* + F⁻¹(β)]` where `F` is
//! the probability-weighted empirical CDF of `rho*[s,t,·]` and
//!
//! ```text
//! F⁻¹(0) = 0,   F⁻¹(β) = min { v sample : F(v) ≥ β }   for β > 0,
//! ```
//!
//! so `β = 0` collapses the area onto the reserve and `β = 1` reaches the
//! largest sampled mismatch.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sopf::SopfSolution;

/// Slack when comparing a cumulative probability against `β`, so that
/// `β = F(v)` recovers `v` despite rounding in the running sum.
const CDF_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum FlexAreaError {
    #[error("empirical CDF needs at least one sample")]
    Empty,
    #[error("sample weights must be nonnegative with positive total")]
    Weights,
    #[error("sample values must be finite")]
    NotFinite,
    #[error("beta {0} outside [0, 1]")]
    Beta(f64),
    #[error("beta table must have {pools} rows of {periods} periods")]
    BetaShape { pools: usize, periods: usize },
}

/// Right-continuous step function over distinct sample values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    /// Distinct sample values, increasing.
    pub values: Vec<f64>,
    /// `F(values[k])`, nondecreasing, last entry exactly 1.
    pub cumulative: Vec<f64>,
}

/// Equally weighted empirical CDF.
pub fn build_ecdf(samples: &[f64]) -> Result<Ecdf, FlexAreaError> {
    let weights = alloc::vec![1.0; samples.len()];
    build_weighted_ecdf(samples, &weights)
}

pub fn build_weighted_ecdf(samples: &[f64], weights: &[f64]) -> Result<Ecdf, FlexAreaError> {
    if samples.is_empty() {
        return Err(FlexAreaError::Empty);
    }
    if weights.len() != samples.len() || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(FlexAreaError::Weights);
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(FlexAreaError::NotFinite);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(FlexAreaError::Weights);
    }
    let mut pairs: Vec<(f64, f64)> = samples.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut values = Vec::new();
    let mut cumulative = Vec::new();
    let mut acc = 0.0;
    for (v, w) in pairs {
        acc += w / total;
        if values.last() == Some(&v) {
            *cumulative.last_mut().expect("paired with values") = acc;
        } else {
            values.push(v);
            cumulative.push(acc);
        }
    }
    *cumulative.last_mut().expect("nonempty") = 1.0;
    Ok(Ecdf { values, cumulative })
}

impl Ecdf {
    /// `F(v)`.
    pub fn eval(&self, v: f64) -> f64 {
        let k = self.values.partition_point(|&s| s <= v);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Generalized inverse with `F⁻¹(0) = 0`.
    pub fn inverse(&self, beta: f64) -> Result<f64, FlexAreaError> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(FlexAreaError::Beta(beta));
        }
        if beta == 0.0 {
            return Ok(0.0);
        }
        let k = self.cumulative.partition_point(|&f| f < beta - CDF_SLACK);
        Ok(self.values[k.min(self.values.len() - 1)])
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("nonempty")
    }

    pub fn jumps(&self) -> usize {
        self.values.len()
    }
}

/// `F⁻¹(β)` for a built CDF.
pub fn inverse_ecdf(f: &Ecdf, beta: f64) -> Result<f64, FlexAreaError> {
    f.inverse(beta)
}

/// Risk level per pool and period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Scalar(f64),
    /// `[pool][period]`
    Table(Vec<Vec<f64>>),
}

impl BetaSpec {
    pub fn validate(&self, pools: usize, periods: usize) -> Result<(), FlexAreaError> {
        match self {
            BetaSpec::Scalar(b) => {
                if !(0.0..=1.0).contains(b) {
                    return Err(FlexAreaError::Beta(*b));
                }
            }
            BetaSpec::Table(rows) => {
                if rows.len() != pools || rows.iter().any(|r| r.len() != periods) {
                    return Err(FlexAreaError::BetaShape { pools, periods });
                }
                if let Some(b) = rows.iter().flatten().find(|b| !(0.0..=1.0).contains(*b)) {
                    return Err(FlexAreaError::Beta(*b));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, pool: usize, period: usize) -> f64 {
        match self {
            BetaSpec::Scalar(b) => *b,
            BetaSpec::Table(rows) => rows[pool][period],
        }
    }
}

/// Power band of one pool in one period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexibilityArea {
    pub pool: usize,
    pub period: usize,
    pub beta: f64,
    /// `p*`, kW.
    pub lower_kw: f64,
    /// `p* + F⁻¹(β)`, kW.
    pub upper_kw: f64,
}

impl FlexibilityArea {
    pub fn lower_pu(&self, s_base_kw: f64) -> f64 {
        self.lower_kw / s_base_kw
    }

    pub fn upper_pu(&self, s_base_kw: f64) -> f64 {
        self.upper_kw / s_base_kw
    }
}

/// eCDF of `rho*[pool][period][·]` weighted by the scenario probabilities.
pub fn mismatch_ecdf(solution: &SopfSolution, pool: usize, period: usize) -> Result<Ecdf, FlexAreaError> {
    build_weighted_ecdf(&solution.mismatch_kw[pool][period], &solution.probabilities)
}

/// Areas for every pool and period, pool-major.
pub fn flexibility_areas(solution: &SopfSolution, beta: &BetaSpec) -> Result<Vec<FlexibilityArea>, FlexAreaError> {
    let pools = solution.reserve_kw.len();
    beta.validate(pools, solution.periods)?;
    let mut out = Vec::with_capacity(pools * solution.periods);
    for s in 0..pools {
        for t in 0..solution.periods {
            let f = mismatch_ecdf(solution, s, t)?;
            let b = beta.get(s, t);
            let lower = solution.reserve_kw[s][t];
            out.push(FlexibilityArea { pool: s, period: t, beta: b, lower_kw: lower, upper_kw: lower + f.inverse(b)? });
        }
    }
    Ok(out)
}
