//! Tightness of the cone relaxation at a solution.
//!
//! The relaxation is exact when every cone holds with equality. That is
//! guaranteed when nodes only consume power and no upper voltage bound is
//! binding, so binding upper bounds are reported alongside the gaps.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::sopf::SopfSolution;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeFlag {
    pub branch: usize,
    pub period: usize,
    pub scenario: usize,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactnessReport {
    pub tol: f64,
    /// Largest `|gap|` over all branch-period-scenario cones.
    pub max_gap: f64,
    /// Cones with `|gap| > tol`.
    pub flagged: Vec<ConeFlag>,
    /// `(node, period, scenario)` with `V² ≥ V_max² − tol`, substation excluded.
    pub binding_upper_voltage: Vec<(usize, usize, usize)>,
}

impl ExactnessReport {
    pub fn is_exact(&self) -> bool {
        self.flagged.is_empty() && self.binding_upper_voltage.is_empty()
    }
}

pub fn check_exactness(solution: &SopfSolution, tol: f64) -> ExactnessReport {
    let mut flagged = Vec::new();
    let mut max_gap: f64 = 0.0;
    for (b, per_t) in solution.cone_gaps.iter().enumerate() {
        for (t, per_w) in per_t.iter().enumerate() {
            for (w, &gap) in per_w.iter().enumerate() {
                max_gap = max_gap.max(gap.abs());
                if gap.abs() > tol {
                    flagged.push(ConeFlag { branch: b, period: t, scenario: w, gap });
                }
            }
        }
    }
    let v_max_sq = solution.v_max * solution.v_max;
    let mut binding = Vec::new();
    for (i, per_t) in solution.voltage_sq.iter().enumerate() {
        if i == solution.substation {
            continue;
        }
        for (t, per_w) in per_t.iter().enumerate() {
            for (w, &v) in per_w.iter().enumerate() {
                if v >= v_max_sq - tol {
                    binding.push((i, t, w));
                }
            }
        }
    }
    ExactnessReport { tol, max_gap, flagged, binding_upper_voltage: binding }
}
