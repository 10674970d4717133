//! Piecewise-linear compensation cost for energy not served.
//!
//! A utility with κ segments is defined on `[0, α_κ]` by
//!
//! ```text
//! u(0) = 0
//! u(Φ) = h_k Φ + b_k      for α_{k-1} < Φ ≤ α_k,  k = 1..κ
//! ```
//!
//! so each segment owns its right endpoint and the function is lower
//! semicontinuous. Inside an optimization model the function is written as
//! a convex combination of segment endpoints selected by one binary per
//! segment (see [`encode_utility`]).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sopf::program::{ConicProgram, RowTag, Sense, UtilityGroup, VarKey};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum UtilityError {
    #[error("utility needs at least one segment")]
    NoSegments,
    #[error("alpha has {alpha} entries, h has {h}, b has {b}; expected alpha = h + 1 = b + 1")]
    Shape { alpha: usize, h: usize, b: usize },
    #[error("first breakpoint must be 0, got {0}")]
    NonzeroOrigin(f64),
    #[error("breakpoints must be strictly increasing")]
    NotIncreasing,
    #[error("coefficients and breakpoints must be finite")]
    NotFinite,
    #[error("energy not served {phi} outside utility domain [0, {max}]")]
    OutOfDomain { phi: f64, max: f64 },
}

/// Serialized shape of a utility: `{"alpha": [...], "h": [...], "b": [...]}`
/// with `alpha[0] = 0` and one `h`/`b` pair per segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityConfig {
    pub alpha: Vec<f64>,
    pub h: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UtilityConfig", into = "UtilityConfig")]
pub struct UtilityFunction {
    alpha: Vec<f64>,
    slope: Vec<f64>,
    intercept: Vec<f64>,
}

impl TryFrom<UtilityConfig> for UtilityFunction {
    type Error = UtilityError;

    fn try_from(c: UtilityConfig) -> Result<Self, Self::Error> {
        UtilityFunction::new(c.alpha, c.h, c.b)
    }
}

impl From<UtilityFunction> for UtilityConfig {
    fn from(u: UtilityFunction) -> Self {
        UtilityConfig { alpha: u.alpha, h: u.slope, b: u.intercept }
    }
}

impl UtilityFunction {
    /// `alpha` holds κ+1 breakpoints starting at 0; `h`, `b` one entry per
    /// segment.
    pub fn new(alpha: Vec<f64>, h: Vec<f64>, b: Vec<f64>) -> Result<Self, UtilityError> {
        if h.is_empty() {
            return Err(UtilityError::NoSegments);
        }
        if alpha.len() != h.len() + 1 || b.len() != h.len() {
            return Err(UtilityError::Shape { alpha: alpha.len(), h: h.len(), b: b.len() });
        }
        if alpha.iter().chain(&h).chain(&b).any(|v| !v.is_finite()) {
            return Err(UtilityError::NotFinite);
        }
        if alpha[0] != 0.0 {
            return Err(UtilityError::NonzeroOrigin(alpha[0]));
        }
        if alpha.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(UtilityError::NotIncreasing);
        }
        Ok(Self { alpha, slope: h, intercept: b })
    }

    /// Number of segments κ.
    pub fn kappa(&self) -> usize {
        self.slope.len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.alpha
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slope
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercept
    }

    /// `α_κ`, the largest energy not served the pool accepts.
    pub fn domain_max(&self) -> f64 {
        self.alpha[self.kappa()]
    }

    /// `f_k(phi)` for segment `k` in `1..=κ`, ignoring the segment's interval.
    pub fn segment_value(&self, k: usize, phi: f64) -> f64 {
        self.slope[k - 1] * phi + self.intercept[k - 1]
    }

    /// `ū_{k}` = `f_{k+1}(α_k)` for `k` in `0..κ` (left end of segment k+1).
    pub fn upper_endpoint(&self, k: usize) -> f64 {
        self.segment_value(k + 1, self.alpha[k])
    }

    /// `u̲_{k}` = `f_k(α_k)` for `k` in `1..=κ`; `u̲_0 = 0`.
    pub fn lower_endpoint(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.segment_value(k, self.alpha[k])
        }
    }

    /// Segment owning `phi` under the half-open convention; `None` at 0.
    pub fn segment_of(&self, phi: f64) -> Option<usize> {
        if phi <= 0.0 {
            return None;
        }
        (1..=self.kappa()).find(|&k| phi <= self.alpha[k]).or(Some(self.kappa()))
    }

    /// κ = 1 with zero slope and intercept: curtailment is free.
    pub fn is_free(&self) -> bool {
        self.kappa() == 1 && self.slope[0] == 0.0 && self.intercept[0] == 0.0
    }

    /// Cheapest segment a minimizing model would select for `phi`, treating
    /// values within `tol` of a breakpoint as lying on it. `None` selects
    /// the origin.
    pub fn cheapest_segment(&self, phi: f64, tol: f64) -> Option<usize> {
        let kappa = self.kappa();
        let mut candidates: Vec<(f64, Option<usize>)> = Vec::new();
        if phi <= tol {
            candidates.push((0.0, None));
        }
        for k in 1..=kappa {
            let (lo, hi) = (self.alpha[k - 1], self.alpha[k]);
            if phi >= lo - tol && phi <= hi + tol {
                let at = phi.clamp(lo, hi);
                candidates.push((self.segment_value(k, at), Some(k)));
            }
        }
        candidates
            .into_iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|c| c.1)
            .unwrap_or(Some(kappa))
    }

    /// Evaluates after snapping `phi` onto `[0, α_κ]` and onto any
    /// breakpoint within `tol`; used for solver-produced values.
    pub fn settle(&self, phi: f64, tol: f64) -> Result<f64, UtilityError> {
        if phi < -tol || phi > self.domain_max() + tol {
            return Err(UtilityError::OutOfDomain { phi, max: self.domain_max() });
        }
        let snapped = self
            .alpha
            .iter()
            .copied()
            .find(|a| (phi - a).abs() <= tol)
            .unwrap_or(phi);
        evaluate_utility(self, snapped)
    }
}

/// Evaluates the utility at `phi` (kWh).
pub fn evaluate_utility(u: &UtilityFunction, phi: f64) -> Result<f64, UtilityError> {
    if !(phi >= 0.0 && phi <= u.domain_max()) {
        return Err(UtilityError::OutOfDomain { phi, max: u.domain_max() });
    }
    Ok(match u.segment_of(phi) {
        None => 0.0,
        Some(k) => u.segment_value(k, phi),
    })
}

/// True when the utility is convex and nondecreasing on `[0, α_κ]`
/// (continuous at every breakpoint including 0⁺, nondecreasing slopes,
/// nonnegative first slope). The segment binaries can then be dropped: a
/// cost-minimizing convex combination of the endpoints already reproduces
/// the function.
pub fn is_convex_shortcut_eligible(u: &UtilityFunction) -> bool {
    let kappa = u.kappa();
    let scale = 1.0
        + u.intercept.iter().map(|b| b.abs()).fold(0.0, f64::max)
        + u.slope.iter().map(|h| h.abs()).fold(0.0, f64::max) * u.domain_max();
    let tol = 1e-9 * scale;
    if u.intercept[0].abs() > tol || u.slope[0] < -tol {
        return false;
    }
    for k in 1..kappa {
        let jump = u.upper_endpoint(k) - u.lower_endpoint(k);
        if jump.abs() > tol || u.slope[k] < u.slope[k - 1] - tol {
            return false;
        }
    }
    true
}

/// Variable and row indices created by [`encode_utility`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityEncoding {
    pub pool: usize,
    pub scenario: usize,
    /// Energy not served `Φ`, kWh.
    pub phi: usize,
    /// Cost `Z`.
    pub cost: usize,
    /// `λ̲_k`, k = 0..κ.
    pub lambda_lower: Vec<usize>,
    /// `λ̄_k`, k = 0..κ-1.
    pub lambda_upper: Vec<usize>,
    /// `y_k`, k = 1..κ; empty when encoded without binaries.
    pub segments: Vec<usize>,
    pub rows: Vec<usize>,
}

/// Appends the endpoint-combination encoding of `u` for one pool and
/// scenario to `program`:
///
/// ```text
/// Z = Σ_{k<κ} (λ̲_k u̲_k + λ̄_k ū_k) + λ̲_κ u̲_κ
/// Φ = Σ_{k<κ} (λ̲_k + λ̄_k) α_k + λ̲_κ α_κ
/// 1 = Σ_{k<κ} (λ̲_k + λ̄_k) + λ̲_κ
/// λ̄_k + λ̲_{k+1} = y_{k+1}          k = 0..κ-1
/// Σ y ≤ 1,  y binary,  λ ≥ 0
/// ```
///
/// With `with_binaries = false` the last two lines (and the link rows) are
/// omitted; only valid for utilities passing
/// [`is_convex_shortcut_eligible`].
pub fn encode_utility(
    u: &UtilityFunction,
    pool: usize,
    scenario: usize,
    program: &mut ConicProgram,
    with_binaries: bool,
) -> UtilityEncoding {
    let kappa = u.kappa();
    let (s, w) = (pool as u32, scenario as u32);
    let phi = program.add_continuous(VarKey::PoolEns { pool: s, scenario: w }, 0.0, u.domain_max());
    // Z is a convex combination of endpoint values.
    let values = (0..=kappa).map(|k| u.lower_endpoint(k)).chain((0..kappa).map(|k| u.upper_endpoint(k)));
    let (z_lo, z_hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let cost = program.add_continuous(VarKey::PoolCost { pool: s, scenario: w }, z_lo, z_hi);
    let lambda_lower: Vec<usize> = (0..=kappa)
        .map(|k| {
            program.add_continuous(
                VarKey::LambdaLower { pool: s, point: k as u32, scenario: w },
                0.0,
                1.0,
            )
        })
        .collect();
    let lambda_upper: Vec<usize> = (0..kappa)
        .map(|k| {
            program.add_continuous(
                VarKey::LambdaUpper { pool: s, point: k as u32, scenario: w },
                0.0,
                1.0,
            )
        })
        .collect();
    let segments: Vec<usize> = if with_binaries {
        (1..=kappa)
            .map(|k| program.add_binary(VarKey::Segment { pool: s, segment: k as u32, scenario: w }))
            .collect()
    } else {
        Vec::new()
    };

    let mut rows = Vec::new();
    let mut z_row = vec![(cost, 1.0)];
    let mut phi_row = vec![(phi, 1.0)];
    let mut sum_row = Vec::with_capacity(2 * kappa + 1);
    for k in 0..=kappa {
        let lo = lambda_lower[k];
        z_row.push((lo, -u.lower_endpoint(k)));
        phi_row.push((lo, -u.breakpoints()[k]));
        sum_row.push((lo, 1.0));
        if k < kappa {
            let hi = lambda_upper[k];
            z_row.push((hi, -u.upper_endpoint(k)));
            phi_row.push((hi, -u.breakpoints()[k]));
            sum_row.push((hi, 1.0));
        }
    }
    rows.push(program.add_row(RowTag::UtilityCost { pool: s, scenario: w }, z_row, Sense::Eq, 0.0));
    rows.push(program.add_row(RowTag::UtilityEnergy { pool: s, scenario: w }, phi_row, Sense::Eq, 0.0));
    rows.push(program.add_row(RowTag::UtilityWeights { pool: s, scenario: w }, sum_row, Sense::Eq, 1.0));

    if with_binaries {
        for k in 0..kappa {
            rows.push(program.add_row(
                RowTag::UtilityLink { pool: s, segment: (k + 1) as u32, scenario: w },
                vec![(lambda_upper[k], 1.0), (lambda_lower[k + 1], 1.0), (segments[k], -1.0)],
                Sense::Eq,
                0.0,
            ));
        }
        rows.push(program.add_row(
            RowTag::SegmentChoice { pool: s, scenario: w },
            segments.iter().map(|&y| (y, 1.0)).collect(),
            Sense::Le,
            1.0,
        ));
        program.utility_groups.push(UtilityGroup {
            pool,
            scenario,
            phi,
            cost,
            lambda_lower: lambda_lower.clone(),
            lambda_upper: lambda_upper.clone(),
            segments: segments.clone(),
            utility: u.clone(),
        });
    }

    UtilityEncoding { pool, scenario, phi, cost, lambda_lower, lambda_upper, segments, rows }
}

/// Resets the multipliers and cost of an encoding whose segment binaries
/// are integral to their exact values for the current `Φ`.
///
/// Once the segment is fixed the encoding has a single feasible point per
/// `Φ`; an interior-point solution only approximates it. Returns `false`
/// and leaves `x` untouched when the binaries are fractional or `Φ` lies
/// more than `tol` outside the selected segment.
pub fn polish_encoding(group: &UtilityGroup, x: &mut [f64], tol: f64) -> bool {
    let u = &group.utility;
    let a = u.breakpoints();
    let mut active = None;
    for (k, &y) in group.segments.iter().enumerate() {
        if (x[y] - 1.0).abs() > tol && x[y].abs() > tol {
            return false;
        }
        if x[y] > 0.5 {
            if active.is_some() {
                return false;
            }
            active = Some(k + 1);
        }
    }
    let phi = x[group.phi];
    let (theta, left, right) = match active {
        None if phi.abs() <= tol => (0.0, None, None),
        None => return false,
        Some(k) => {
            let (lo, hi) = (a[k - 1], a[k]);
            if phi < lo - tol || phi > hi + tol {
                return false;
            }
            ((phi.clamp(lo, hi) - lo) / (hi - lo), Some(k - 1), Some(k))
        }
    };
    for &j in group.lambda_lower.iter().chain(&group.lambda_upper) {
        x[j] = 0.0;
    }
    match (left, right) {
        (Some(l), Some(r)) => {
            x[group.lambda_upper[l]] = 1.0 - theta;
            x[group.lambda_lower[r]] = theta;
            x[group.cost] = (1.0 - theta) * u.upper_endpoint(l) + theta * u.lower_endpoint(r);
        }
        _ => {
            x[group.lambda_lower[0]] = 1.0;
            x[group.cost] = 0.0;
        }
    }
    true
}
