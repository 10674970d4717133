//! Continuous SOCP solves through Clarabel.
//!
//! The program is mapped to Clarabel's standard form `A x + s = b`,
//! `s ∈ K`:
//!
//! - variables with equal bounds are substituted out, the others scaled by
//!   their largest finite bound so that model quantities in kW, kWh and pu
//!   all live on a unit scale,
//! - equality rows go to the zero cone, inequality rows and finite bounds to
//!   the nonnegative cone, each linear row scaled to unit infinity norm,
//! - a rotated cone `v·i ≥ ‖t‖²` becomes `‖(v − i, 2t)‖ ≤ v + i`.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use evflex_core::conic::{BackendSolution, BackendStatus, ConicBackend, SolverOptions};
use evflex_core::sopf::{ConicProgram, Sense};

/// Tolerance for constraints left without free variables after
/// substitution.
const CONSTANT_ROW_TOL: f64 = 1e-9;

#[derive(Debug)]
pub struct ClarabelBackend {
    origin: Instant,
    pub verbose: bool,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self { origin: Instant::now(), verbose: false }
    }
}

impl ClarabelBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

struct Assembly {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
    m: usize,
}

impl Assembly {
    fn push_row(&mut self, entries: &[(usize, f64)], rhs: f64, scale: f64) {
        for &(j, a) in entries {
            self.rows.push(self.m);
            self.cols.push(j);
            self.vals.push(a * scale);
        }
        self.b.push(rhs * scale);
        self.m += 1;
    }
}

fn failure(status: BackendStatus, n: usize) -> BackendSolution {
    BackendSolution { status, x: vec![f64::NAN; n], dual_objective: f64::NAN, iterations: 0 }
}

impl ConicBackend for ClarabelBackend {
    fn solve(&self, program: &ConicProgram, lower: &[f64], upper: &[f64], options: &SolverOptions) -> BackendSolution {
        let n = program.variables.len();
        // Column of each free variable; fixed ones keep their value.
        let mut col = vec![usize::MAX; n];
        let mut free = Vec::new();
        for j in 0..n {
            if lower[j] > upper[j] {
                return failure(BackendStatus::Infeasible, n);
            }
            if lower[j] < upper[j] {
                col[j] = free.len();
                free.push(j);
            }
        }
        let fixed = |j: usize| col[j] == usize::MAX;
        let nf = free.len();
        let scale: Vec<f64> = free
            .iter()
            .map(|&j| {
                let m = [lower[j], upper[j]].iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs()));
                if m > 0.0 {
                    m
                } else {
                    1.0
                }
            })
            .collect();

        let mut asm = Assembly { rows: Vec::new(), cols: Vec::new(), vals: Vec::new(), b: Vec::new(), m: 0 };
        let mut entries: Vec<(usize, f64)> = Vec::new();

        // Collects the free part of a row into `entries`; returns the rhs
        // shifted by the fixed part.
        let reduce = |coeffs: &[(usize, f64)], rhs: f64, entries: &mut Vec<(usize, f64)>| -> f64 {
            entries.clear();
            let mut r = rhs;
            for &(j, a) in coeffs {
                if a == 0.0 {
                    continue;
                }
                if fixed(j) {
                    r -= a * lower[j];
                } else {
                    entries.push((col[j], a * scale[col[j]]));
                }
            }
            r
        };

        let mut zero_rows = 0;
        for row in program.rows.iter().filter(|r| r.sense == Sense::Eq) {
            let rhs = reduce(&row.coeffs, row.rhs, &mut entries);
            if entries.is_empty() {
                if rhs.abs() > CONSTANT_ROW_TOL * (1.0 + row.rhs.abs()) {
                    return failure(BackendStatus::Infeasible, n);
                }
                continue;
            }
            let norm = entries.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
            asm.push_row(&entries, rhs, 1.0 / norm);
            zero_rows += 1;
        }

        let mut nonneg_rows = 0;
        for row in program.rows.iter().filter(|r| r.sense != Sense::Eq) {
            let rhs = reduce(&row.coeffs, row.rhs, &mut entries);
            let sign = if row.sense == Sense::Le { 1.0 } else { -1.0 };
            if entries.is_empty() {
                if sign * rhs < -CONSTANT_ROW_TOL * (1.0 + row.rhs.abs()) {
                    return failure(BackendStatus::Infeasible, n);
                }
                continue;
            }
            let norm = entries.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
            asm.push_row(&entries, rhs, sign / norm);
            nonneg_rows += 1;
        }
        for (k, &j) in free.iter().enumerate() {
            if lower[j].is_finite() {
                asm.push_row(&[(k, -1.0)], -lower[j] / scale[k], 1.0);
                nonneg_rows += 1;
            }
            if upper[j].is_finite() {
                asm.push_row(&[(k, 1.0)], upper[j] / scale[k], 1.0);
                nonneg_rows += 1;
            }
        }

        let mut cones = Vec::new();
        if zero_rows > 0 {
            cones.push(SupportedConeT::ZeroConeT(zero_rows));
        }
        if nonneg_rows > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(nonneg_rows));
        }
        for cone in &program.cones {
            // s = b − A x with s = (v + i, v − i, 2t).
            let mut members: Vec<Vec<(usize, f64)>> = vec![vec![(cone.v, 1.0), (cone.i, 1.0)], vec![(cone.v, 1.0), (cone.i, -1.0)]];
            members.extend(cone.tail.iter().map(|&t| vec![(t, 2.0)]));
            if std::iter::once(cone.v).chain(std::iter::once(cone.i)).chain(cone.tail.iter().copied()).all(fixed) {
                let gap = lower[cone.v] * lower[cone.i] - cone.tail.iter().map(|&t| lower[t] * lower[t]).sum::<f64>();
                if gap < -CONSTANT_ROW_TOL {
                    return failure(BackendStatus::Infeasible, n);
                }
                continue;
            }
            for member in &members {
                let mut r = 0.0;
                entries.clear();
                for &(j, a) in member {
                    if fixed(j) {
                        r += a * lower[j];
                    } else {
                        entries.push((col[j], -a * scale[col[j]]));
                    }
                }
                asm.push_row(&entries, r, 1.0);
            }
            cones.push(SupportedConeT::SecondOrderConeT(members.len()));
        }

        let mut q = vec![0.0; nf];
        let mut constant = 0.0;
        for (j, v) in program.variables.iter().enumerate() {
            if fixed(j) {
                constant += v.cost * lower[j];
            } else {
                q[col[j]] = v.cost * scale[col[j]];
            }
        }

        if nf == 0 {
            let x = lower.to_vec();
            return BackendSolution { status: BackendStatus::Optimal, x, dual_objective: constant, iterations: 0 };
        }

        let a = CscMatrix::new_from_triplets(asm.m, nf, asm.rows, asm.cols, asm.vals);
        let p = CscMatrix::zeros((nf, nf));
        let mut settings = DefaultSettings::<f64>::default();
        settings.verbose = self.verbose || std::env::var_os("EVFLEX_SOLVER_VERBOSE").is_some();
        settings.max_iter = options.max_iter;
        settings.tol_feas = options.feas_tol;
        settings.tol_gap_abs = options.gap_tol;
        settings.tol_gap_rel = options.gap_tol;
        settings.max_threads = 1;
        if let Some(limit) = options.time_limit {
            settings.time_limit = limit;
        }
        let mut solver = match DefaultSolver::new(&p, &q, &a, &asm.b, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                log::error!("clarabel rejected the problem: {e}");
                return failure(BackendStatus::Numerical, n);
            }
        };
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => BackendStatus::Optimal,
            SolverStatus::AlmostSolved => BackendStatus::AlmostOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => BackendStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => BackendStatus::Unbounded,
            SolverStatus::MaxIterations => BackendStatus::IterationLimit,
            SolverStatus::MaxTime => BackendStatus::TimeLimit,
            _ => BackendStatus::Numerical,
        };
        let mut x = lower.to_vec();
        for (k, &j) in free.iter().enumerate() {
            x[j] = sol.x[k] * scale[k];
        }
        BackendSolution { status, x, dual_objective: sol.obj_val_dual + constant, iterations: sol.iterations }
    }

    fn now(&self) -> Option<f64> {
        Some(self.origin.elapsed().as_secs_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use evflex_core::conic::solve_socp;
    use evflex_core::sopf::{RowTag, VarKey};

    #[test]
    fn small_lp() {
        // min −x − y  s.t. x + 2y ≤ 4, x ≤ 3
        let mut p = ConicProgram::new();
        let x = p.add_continuous(VarKey::Aux(0), 0.0, 3.0);
        let y = p.add_continuous(VarKey::Aux(1), 0.0, f64::INFINITY);
        p.add_cost(x, -1.0);
        p.add_cost(y, -1.0);
        p.add_row(RowTag::Aux(0), vec![(x, 1.0), (y, 2.0)], Sense::Le, 4.0);
        let (sol, report) = solve_socp(&ClarabelBackend::new(), &p, &SolverOptions::default()).unwrap();
        assert!((sol[x] - 3.0).abs() < 1e-6);
        assert!((sol[y] - 0.5).abs() < 1e-6);
        assert!((report.primal_objective + 3.5).abs() < 1e-6);
    }

    #[test]
    fn rotated_cone_is_tight_at_optimum() {
        // min v + i  s.t. v·i ≥ t², t = 2  → v = i = 2
        let mut p = ConicProgram::new();
        let v = p.add_continuous(VarKey::Aux(0), 0.0, f64::INFINITY);
        let i = p.add_continuous(VarKey::Aux(1), 0.0, f64::INFINITY);
        let t = p.add_continuous(VarKey::Aux(2), 2.0, 2.0);
        p.add_cost(v, 1.0);
        p.add_cost(i, 1.0);
        p.add_cone(v, i, vec![t]);
        let (sol, _) = solve_socp(&ClarabelBackend::new(), &p, &SolverOptions::default()).unwrap();
        assert!((sol[v] - 2.0).abs() < 1e-6 && (sol[i] - 2.0).abs() < 1e-6);
        assert_eq!(sol[t], 2.0);
    }

    #[test]
    fn infeasible_fixed_row_is_detected() {
        let mut p = ConicProgram::new();
        let x = p.add_continuous(VarKey::Aux(0), 1.0, 1.0);
        p.add_row(RowTag::Aux(0), vec![(x, 1.0)], Sense::Eq, 2.0);
        let err = solve_socp(&ClarabelBackend::new(), &p, &SolverOptions::default()).unwrap_err();
        assert_eq!(err, evflex_core::SolveError::Infeasible);
    }

    #[test]
    fn infeasible_program_is_reported() {
        let mut p = ConicProgram::new();
        let x = p.add_continuous(VarKey::Aux(0), 0.0, 1.0);
        p.add_row(RowTag::Aux(0), vec![(x, 1.0)], Sense::Ge, 2.0);
        let err = solve_socp(&ClarabelBackend::new(), &p, &SolverOptions::default()).unwrap_err();
        assert_eq!(err, evflex_core::SolveError::Infeasible);
    }
}
