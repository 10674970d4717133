//! Mapping a solver point back onto model quantities.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::program::ConicProgram;
use super::ModelMode;
use crate::conic::{SolveReport, SolveStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolutionStatus {
    Optimal,
    Infeasible,
    /// Feasible incumbent whose bound gap exceeds the target.
    GapLimit,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ExtractError {
    #[error("program carries no model layout")]
    NoLayout,
    #[error("point has {got} entries, program has {expected} variables")]
    Length { got: usize, expected: usize },
    #[error("row {row} violated by {violation:e}")]
    RowViolation { row: String, violation: f64 },
    #[error("variable {var} = {value} outside [{lower}, {upper}]")]
    BoundViolation { var: String, value: f64, lower: f64, upper: f64 },
    #[error("solver status {0:?} carries no usable point")]
    NoPoint(SolveStatus),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// Row violations are accepted up to `row_tol · (1 + |rhs| + Σ|a x|)`.
    pub row_tol: f64,
    /// Bound violations up to `bound_tol · (1 + |bound|)` are clamped.
    pub bound_tol: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { row_tol: 1e-6, bound_tol: 1e-6 }
    }
}

/// Optimal first- and second-stage values. Pool quantities in kW / kWh,
/// network quantities in pu.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SopfSolution {
    pub status: SolutionStatus,
    pub mode: ModelMode,
    pub objective: f64,
    /// Incumbent minus best bound.
    pub bound_gap: f64,
    pub periods: usize,
    pub scenarios: usize,
    pub delta_t: f64,
    pub s_base_kw: f64,
    pub probabilities: Vec<f64>,
    /// `p*[s][t]`
    pub reserve_kw: Vec<Vec<f64>>,
    /// `rho*[s][t][w]`
    pub mismatch_kw: Vec<Vec<Vec<f64>>>,
    pub task_pool: Vec<usize>,
    /// `x*[n][w][t]`, zero outside the plug-in window.
    pub task_power_kw: Vec<Vec<Vec<f64>>>,
    /// `E[n][w]`
    pub task_energy_kwh: Vec<Vec<f64>>,
    /// `phi*[n][w]`
    pub task_ens_kwh: Vec<Vec<f64>>,
    /// `Phi*[s][w]`
    pub pool_ens_kwh: Vec<Vec<f64>>,
    /// `Z*[s][w]`; zero in the base case.
    pub pool_cost: Vec<Vec<f64>>,
    /// `[i][t][w]`
    pub voltage_sq: Vec<Vec<Vec<f64>>>,
    /// `[b][t][w]`
    pub current_sq: Vec<Vec<Vec<f64>>>,
    pub flow_p: Vec<Vec<Vec<f64>>>,
    pub flow_q: Vec<Vec<Vec<f64>>>,
    /// `(V²I² − P² − Q²) / max(1, V²I²)` per `[b][t][w]`.
    pub cone_gaps: Vec<Vec<Vec<f64>>>,
    pub v_min: f64,
    pub v_max: f64,
    pub substation: usize,
    pub current_cap: Vec<f64>,
}

impl SopfSolution {
    /// Pool draw `p + rho` in kW.
    pub fn pool_draw_kw(&self, pool: usize, period: usize, scenario: usize) -> f64 {
        self.reserve_kw[pool][period] + self.mismatch_kw[pool][period][scenario]
    }

    /// `Σ_w π_w Σ_s Z[s,w]`.
    pub fn expected_flex_cost(&self) -> f64 {
        let mut total = 0.0;
        for per_pool in &self.pool_cost {
            for (z, pi) in per_pool.iter().zip(&self.probabilities) {
                total += pi * z;
            }
        }
        total
    }

    /// Largest `|E − Σ x Δt − phi|` over tasks and scenarios.
    pub fn max_energy_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..self.task_energy_kwh.len() {
            for w in 0..self.scenarios {
                let served: f64 = self.task_power_kw[n][w].iter().sum::<f64>() * self.delta_t;
                let r = self.task_energy_kwh[n][w] - served - self.task_ens_kwh[n][w];
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    pub fn max_cone_gap(&self) -> f64 {
        self.cone_gaps.iter().flatten().flatten().fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn status_of(report: &SolveReport) -> Result<SolutionStatus, ExtractError> {
    match report.status {
        SolveStatus::Optimal => Ok(SolutionStatus::Optimal),
        SolveStatus::GapLimit | SolveStatus::NodeLimit | SolveStatus::TimeLimit if report.has_point => {
            Ok(SolutionStatus::GapLimit)
        }
        other => Err(ExtractError::NoPoint(other)),
    }
}

/// Maps `x` onto model quantities with default tolerances.
pub fn extract_solution(
    program: &ConicProgram,
    x: &[f64],
    report: &SolveReport,
) -> Result<SopfSolution, ExtractError> {
    extract_solution_with(program, x, report, &ExtractOptions::default())
}

/// Checks every row and bound of `program` at `x`, clamps bound violations
/// within tolerance and maps the point onto model quantities.
pub fn extract_solution_with(
    program: &ConicProgram,
    x: &[f64],
    report: &SolveReport,
    options: &ExtractOptions,
) -> Result<SopfSolution, ExtractError> {
    let layout = program.layout.as_ref().ok_or(ExtractError::NoLayout)?;
    let status = status_of(report)?;
    if x.len() != program.variables.len() {
        return Err(ExtractError::Length { got: x.len(), expected: program.variables.len() });
    }
    for row in &program.rows {
        let violation = row.violation(x);
        if violation > options.row_tol * row.magnitude(x) {
            return Err(ExtractError::RowViolation { row: row.tag.to_string(), violation });
        }
    }
    let mut x = x.to_vec();
    for (j, var) in program.variables.iter().enumerate() {
        let v = x[j];
        let below = var.lower - v;
        let above = v - var.upper;
        if below > options.bound_tol * (1.0 + var.lower.abs()) || above > options.bound_tol * (1.0 + var.upper.abs()) || v.is_nan() {
            return Err(ExtractError::BoundViolation {
                var: var.key.to_string(),
                value: v,
                lower: var.lower,
                upper: var.upper,
            });
        }
        x[j] = v.clamp(var.lower, var.upper);
    }

    let (t_len, w_len) = (layout.periods, layout.scenarios);
    let val = |j: usize| x[j];
    let grid = |ix: &Vec<Vec<Vec<usize>>>| -> Vec<Vec<Vec<f64>>> {
        ix.iter().map(|a| a.iter().map(|b| b.iter().map(|&j| val(j)).collect()).collect()).collect()
    };
    let task_power_kw = layout
        .task_power
        .iter()
        .map(|per_w| {
            per_w
                .iter()
                .map(|(start, vars)| {
                    let mut row = vec![0.0; t_len];
                    for (k, &j) in vars.iter().enumerate() {
                        row[start + k] = val(j);
                    }
                    row
                })
                .collect()
        })
        .collect();
    let cone_gaps = layout
        .cone
        .iter()
        .map(|a| a.iter().map(|b| b.iter().map(|&c| program.cones[c].gap(&x)).collect()).collect())
        .collect();

    Ok(SopfSolution {
        status,
        mode: layout.mode,
        objective: program.objective_value(&x),
        bound_gap: report.bound_gap,
        periods: t_len,
        scenarios: w_len,
        delta_t: layout.delta_t,
        s_base_kw: layout.s_base_kw,
        probabilities: layout.probabilities.clone(),
        reserve_kw: layout.reserve.iter().map(|r| r.iter().map(|&j| val(j)).collect()).collect(),
        mismatch_kw: grid(&layout.mismatch),
        task_pool: layout.task_pool.clone(),
        task_power_kw,
        task_energy_kwh: layout.task_energy.clone(),
        task_ens_kwh: layout.task_ens.iter().map(|r| r.iter().map(|&j| val(j)).collect()).collect(),
        pool_ens_kwh: layout.pool_ens.iter().map(|r| r.iter().map(|&j| val(j)).collect()).collect(),
        pool_cost: layout
            .pool_cost
            .iter()
            .map(|r| r.iter().map(|j| j.map_or(0.0, val)).collect())
            .collect(),
        voltage_sq: grid(&layout.voltage_sq),
        current_sq: grid(&layout.current_sq),
        flow_p: grid(&layout.flow_p),
        flow_q: grid(&layout.flow_q),
        cone_gaps,
        v_min: layout.v_min,
        v_max: layout.v_max,
        substation: layout.substation,
        current_cap: layout.current_cap.clone(),
    })
}
