//! Solving assembled programs.
//!
//! Continuous solves are delegated to a [`ConicBackend`]: any primal-dual
//! interior-point SOCP solver that accepts per-variable bounds. The `evflex`
//! crate supplies one. On top of it this module runs branch-and-bound over
//! the utility binaries ([`solve_misocp`]) and checks relaxation exactness
//! ([`check_exactness`]).
//!
//! A backend receives rotated cones `v·i ≥ ‖tail‖²`; the usual embedding into
//! a standard second-order cone is `‖(v − i, 2·tail)‖ ≤ v + i`.

mod bnb;
mod exactness;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sopf::program::{ConicProgram, VarKind};

pub use bnb::solve_misocp;
pub use exactness::{check_exactness, ConeFlag, ExactnessReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Primal/dual feasibility tolerance of the continuous solver.
    pub feas_tol: f64,
    /// Duality-gap tolerance of the continuous solver (absolute and relative).
    pub gap_tol: f64,
    pub max_iter: u32,
    /// Branch-and-bound absolute gap target.
    pub bb_abs_gap: f64,
    /// Branch-and-bound relative gap target.
    pub bb_rel_gap: f64,
    pub node_limit: usize,
    /// Skip branch-and-bound and only round the relaxation.
    pub heuristic_only: bool,
    /// Above this many binaries branch-and-bound is replaced by rounding.
    pub exact_binary_limit: usize,
    /// Wall-clock limit in seconds, honoured when the backend has a clock.
    pub time_limit: Option<f64>,
    /// A binary is integral when within this distance of 0 or 1.
    pub integrality_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
            bb_abs_gap: 1e-6,
            bb_rel_gap: 1e-4,
            node_limit: 10_000,
            heuristic_only: false,
            exact_binary_limit: 64,
            time_limit: None,
            integrality_tol: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = [self.feas_tol, self.gap_tol, self.integrality_tol];
        if positive.iter().any(|t| !(*t > 0.0)) || !(self.bb_abs_gap >= 0.0) || !(self.bb_rel_gap >= 0.0) {
            return Err(SolveError::InvalidOptions);
        }
        if self.max_iter == 0 || self.time_limit.is_some_and(|t| !(t > 0.0)) {
            return Err(SolveError::InvalidOptions);
        }
        Ok(())
    }
}

/// Outcome of one continuous backend solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendStatus {
    Optimal,
    /// Converged to reduced accuracy.
    AlmostOptimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    TimeLimit,
    Numerical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackendSolution {
    pub status: BackendStatus,
    pub x: Vec<f64>,
    /// Dual objective excluding [`ConicProgram::objective_offset`].
    pub dual_objective: f64,
    pub iterations: u32,
}

/// A continuous SOCP solver. Binary variables are treated as continuous
/// within the supplied bounds.
pub trait ConicBackend {
    fn solve(
        &self,
        program: &ConicProgram,
        lower: &[f64],
        upper: &[f64],
        options: &SolverOptions,
    ) -> BackendSolution;

    /// Seconds since an arbitrary fixed origin, if the backend has a clock.
    fn now(&self) -> Option<f64> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// Incumbent found but the bound gap exceeds the target.
    GapLimit,
    NodeLimit,
    TimeLimit,
    IterationLimit,
    Infeasible,
    Unbounded,
    NumericalError,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMode {
    Continuous,
    BranchAndBound,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub mode: SolveMode,
    /// Whether a usable point accompanies the report.
    pub has_point: bool,
    pub primal_objective: f64,
    /// Dual objective (continuous) or best bound (integer).
    pub dual_objective: f64,
    /// Interior-point iterations summed over all solves.
    pub iterations: u64,
    /// Branch-and-bound nodes evaluated. Re-solves that only pin the
    /// binaries of an already integral point are not counted.
    pub nodes: usize,
    /// Incumbent minus best bound, ≥ 0.
    pub bound_gap: f64,
    pub max_cone_residual: f64,
    pub max_row_residual: f64,
    pub warnings: Vec<String>,
}

impl SolveReport {
    /// Report for a point obtained outside the solver, e.g. in tests.
    pub fn from_point(status: SolveStatus, bound_gap: f64) -> Self {
        Self {
            status,
            mode: SolveMode::Continuous,
            has_point: true,
            primal_objective: 0.0,
            dual_objective: 0.0,
            iterations: 0,
            nodes: 0,
            bound_gap,
            max_cone_residual: 0.0,
            max_row_residual: 0.0,
            warnings: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SolveError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("iteration limit reached")]
    IterationLimit,
    #[error("time limit reached")]
    TimeLimit,
    #[error("numerical failure in the continuous solver")]
    Numerical,
    #[error("program has {0} binaries that are not fixed")]
    UnfixedBinaries(usize),
    #[error("node limit reached without a feasible incumbent")]
    NoIncumbent,
    #[error("invalid solver options")]
    InvalidOptions,
}

impl SolveError {
    pub fn status(&self) -> SolveStatus {
        match self {
            SolveError::Infeasible => SolveStatus::Infeasible,
            SolveError::Unbounded => SolveStatus::Unbounded,
            SolveError::IterationLimit => SolveStatus::IterationLimit,
            SolveError::TimeLimit => SolveStatus::TimeLimit,
            SolveError::NoIncumbent => SolveStatus::NodeLimit,
            _ => SolveStatus::NumericalError,
        }
    }
}

/// Largest scaled row violation and largest negative cone gap at `x`.
pub fn residuals(program: &ConicProgram, x: &[f64]) -> (f64, f64) {
    let rows = program
        .rows
        .iter()
        .map(|r| r.violation(x) / r.magnitude(x))
        .fold(0.0, f64::max);
    let cones = program.cones.iter().map(|c| (-c.gap(x)).max(0.0)).fold(0.0, f64::max);
    (rows, cones)
}

/// One continuous solve with the given bounds; maps backend failures to
/// errors.
pub(crate) fn relax(
    backend: &dyn ConicBackend,
    program: &ConicProgram,
    lower: &[f64],
    upper: &[f64],
    options: &SolverOptions,
    warnings: &mut Vec<String>,
) -> Result<(Vec<f64>, f64, f64, u32), SolveError> {
    let sol = backend.solve(program, lower, upper, options);
    match sol.status {
        BackendStatus::Optimal => {}
        BackendStatus::AlmostOptimal => {
            log::warn!("continuous solve converged to reduced accuracy");
            warnings.push("continuous solve converged to reduced accuracy".into());
        }
        BackendStatus::Infeasible => return Err(SolveError::Infeasible),
        BackendStatus::Unbounded => return Err(SolveError::Unbounded),
        BackendStatus::IterationLimit => return Err(SolveError::IterationLimit),
        BackendStatus::TimeLimit => return Err(SolveError::TimeLimit),
        BackendStatus::Numerical => return Err(SolveError::Numerical),
    }
    let primal = program.objective_value(&sol.x);
    let dual = sol.dual_objective + program.objective_offset;
    Ok((sol.x, primal, dual, sol.iterations))
}

fn bounds(program: &ConicProgram) -> (Vec<f64>, Vec<f64>) {
    (
        program.variables.iter().map(|v| v.lower).collect(),
        program.variables.iter().map(|v| v.upper).collect(),
    )
}

/// Solves a program whose binaries are absent or fixed by their bounds.
pub fn solve_socp(
    backend: &dyn ConicBackend,
    program: &ConicProgram,
    options: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    options.validate()?;
    let unfixed = program
        .variables
        .iter()
        .filter(|v| v.kind == VarKind::Binary && v.lower != v.upper)
        .count();
    if unfixed > 0 {
        return Err(SolveError::UnfixedBinaries(unfixed));
    }
    let (lower, upper) = bounds(program);
    let mut warnings = Vec::new();
    let (x, primal, dual, iterations) = relax(backend, program, &lower, &upper, options, &mut warnings)?;
    let (rows, cones) = residuals(program, &x);
    let report = SolveReport {
        status: SolveStatus::Optimal,
        mode: SolveMode::Continuous,
        has_point: true,
        primal_objective: primal,
        dual_objective: dual,
        iterations: iterations as u64,
        nodes: 1,
        bound_gap: 0.0,
        max_cone_residual: cones,
        max_row_residual: rows,
        warnings,
    };
    Ok((x, report))
}
