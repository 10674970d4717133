//! Branch-and-bound and rounding over the utility segment binaries.
//!
//! Nodes are explored best bound first. At each node the most fractional
//! binary is branched on, ties broken by the lowest `(pool, scenario,
//! segment)`; both children are solved immediately. Fixing `y_k = 1`
//! also fixes the other segments of the same utility to 0.
//!
//! Rounding fixes, per utility group, the segment a cost-minimizing model
//! would choose for the relaxed energy not served and re-solves. It gives
//! the initial incumbent of branch-and-bound and the whole answer in
//! heuristic mode.
//!
//! The returned point has the utility multipliers of every settled
//! segment reset to their exact values (see
//! [`polish_encoding`](crate::utility::polish_encoding)).

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{bounds, relax, residuals, ConicBackend, SolveError, SolveMode, SolveReport, SolveStatus, SolverOptions};
use crate::sopf::program::{ConicProgram, VarKey};
use crate::utility::polish_encoding;

struct Node {
    bound: f64,
    id: u64,
    /// Per binary: -1 free, 0 or 1 fixed.
    fixing: Vec<i8>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // BinaryHeap is a max-heap: the smallest bound, then the oldest node,
    // compares greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    backend: &'a dyn ConicBackend,
    program: &'a ConicProgram,
    options: &'a SolverOptions,
    /// Binary variable indices in branching tie-break order.
    binaries: Vec<usize>,
    /// Utility group of each binary (position in `binaries`).
    group_of: Vec<Option<usize>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    iterations: u64,
    solves: usize,
    /// Re-solves of already integral points with their binaries pinned.
    settles: usize,
    warnings: Vec<alloc::string::String>,
}

impl<'a> Search<'a> {
    fn new(backend: &'a dyn ConicBackend, program: &'a ConicProgram, options: &'a SolverOptions) -> Self {
        let mut binaries = program.binary_indices();
        binaries.sort_by_key(|&j| match program.variables[j].key {
            VarKey::Segment { pool, segment, scenario } => (0u8, pool, scenario, segment, j),
            _ => (1u8, 0, 0, 0, j),
        });
        let group_of = binaries
            .iter()
            .map(|j| program.utility_groups.iter().position(|g| g.segments.contains(j)))
            .collect();
        let (lower, upper) = bounds(program);
        Self {
            backend,
            program,
            options,
            binaries,
            group_of,
            lower,
            upper,
            iterations: 0,
            solves: 0,
            settles: 0,
            warnings: Vec::new(),
        }
    }

    fn solve(&mut self, fixing: &[i8]) -> Result<(Vec<f64>, f64), SolveError> {
        let (mut lo, mut up) = (self.lower.clone(), self.upper.clone());
        for (b, &f) in fixing.iter().enumerate() {
            if f >= 0 {
                let j = self.binaries[b];
                lo[j] = f as f64;
                up[j] = f as f64;
            }
        }
        self.solves += 1;
        let (x, primal, _dual, it) =
            relax(self.backend, self.program, &lo, &up, self.options, &mut self.warnings)?;
        self.iterations += it as u64;
        Ok((x, primal))
    }

    fn nodes(&self) -> usize {
        self.solves - self.settles
    }

    fn settle(&mut self, fixing: &[i8]) -> Result<(Vec<f64>, f64), SolveError> {
        self.settles += 1;
        self.solve(fixing)
    }

    /// Fixing inherited from the program bounds.
    fn root_fixing(&self) -> Vec<i8> {
        self.binaries
            .iter()
            .map(|&j| {
                let v = &self.program.variables[j];
                if v.lower == v.upper {
                    v.lower as i8
                } else {
                    -1
                }
            })
            .collect()
    }

    fn is_integral(&self, x: &[f64]) -> bool {
        let tol = self.options.integrality_tol;
        self.binaries.iter().all(|&j| x[j] <= tol || x[j] >= 1.0 - tol)
    }

    fn most_fractional(&self, x: &[f64], fixing: &[i8]) -> Option<usize> {
        let tol = self.options.integrality_tol;
        let mut best: Option<(usize, f64)> = None;
        for (b, &j) in self.binaries.iter().enumerate() {
            if fixing[b] >= 0 {
                continue;
            }
            let frac = x[j] - libm::floor(x[j]);
            if frac <= tol || frac >= 1.0 - tol {
                continue;
            }
            let dist = libm::fabs(frac - 0.5);
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((b, dist));
            }
        }
        best.map(|(b, _)| b)
    }

    fn child(&self, fixing: &[i8], b: usize, value: i8) -> Vec<i8> {
        let mut f = fixing.to_vec();
        f[b] = value;
        if value == 1 {
            if let Some(g) = self.group_of[b] {
                for (other, og) in self.group_of.iter().enumerate() {
                    if *og == Some(g) && other != b {
                        f[other] = 0;
                    }
                }
            }
        }
        f
    }

    /// Rounds every free binary of an (almost) integral point to nearest.
    fn integral_fixing(&self, x: &[f64], fixing: &[i8]) -> Vec<i8> {
        fixing
            .iter()
            .zip(&self.binaries)
            .map(|(&f, &j)| if f >= 0 { f } else if x[j] >= 0.5 { 1 } else { 0 })
            .collect()
    }

    /// Rounds a relaxed point: every group gets the segment its energy not
    /// served falls into at least cost; remaining binaries round to nearest.
    fn rounding(&self, x: &[f64], fixing: &[i8]) -> Vec<i8> {
        let mut f = fixing.to_vec();
        for (b, &j) in self.binaries.iter().enumerate() {
            if f[b] < 0 && self.group_of[b].is_none() {
                f[b] = if x[j] >= 0.5 { 1 } else { 0 };
            }
        }
        for (g, group) in self.program.utility_groups.iter().enumerate() {
            let members: Vec<usize> = (0..self.binaries.len()).filter(|&b| self.group_of[b] == Some(g)).collect();
            if members.iter().any(|&b| f[b] == 1) {
                for &b in &members {
                    if f[b] < 0 {
                        f[b] = 0;
                    }
                }
                continue;
            }
            let u = &group.utility;
            let tol = 1e-6 * (1.0 + u.domain_max());
            let choice = u.cheapest_segment(x[group.phi], tol);
            for &b in &members {
                let k = group.segments.iter().position(|&j| j == self.binaries[b]).map(|p| p + 1);
                let want = if k == choice { 1 } else { 0 };
                if f[b] < 0 {
                    f[b] = want;
                }
            }
        }
        f
    }

    fn elapsed_out(&self, start: Option<f64>) -> bool {
        match (self.options.time_limit, start, self.backend.now()) {
            (Some(limit), Some(t0), Some(now)) => now - t0 > limit,
            _ => false,
        }
    }

    fn report(&self, status: SolveStatus, mode: SolveMode, x: &[f64], incumbent: f64, bound: f64) -> SolveReport {
        let (rows, cones) = residuals(self.program, x);
        SolveReport {
            status,
            mode,
            has_point: true,
            primal_objective: incumbent,
            dual_objective: bound,
            iterations: self.iterations,
            nodes: self.nodes(),
            bound_gap: (incumbent - bound).max(0.0),
            max_cone_residual: cones,
            max_row_residual: rows,
            warnings: self.warnings.clone(),
        }
    }

    /// Exact multipliers for every utility whose segment is settled.
    fn polish(&self, mut x: Vec<f64>, obj: f64) -> (Vec<f64>, f64) {
        let tol = self.options.integrality_tol;
        let mut changed = false;
        for group in &self.program.utility_groups {
            changed |= polish_encoding(group, &mut x, tol);
        }
        if changed {
            let obj = self.program.objective_value(&x);
            (x, obj)
        } else {
            (x, obj)
        }
    }

    fn gap_closed(&self, incumbent: f64, bound: f64) -> bool {
        let target = self.options.bb_abs_gap.max(self.options.bb_rel_gap * libm::fabs(incumbent));
        incumbent - bound <= target
    }
}

/// Solves a mixed-integer program.
///
/// * no free binaries: one continuous solve;
/// * at most [`SolverOptions::exact_binary_limit`] binaries and not
///   `heuristic_only`: branch-and-bound to the gap targets or node limit;
/// * otherwise: relaxation, rounding, one re-solve, with the gap to the
///   relaxation bound reported.
pub fn solve_misocp(
    backend: &dyn ConicBackend,
    program: &ConicProgram,
    options: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    options.validate()?;
    let mut search = Search::new(backend, program, options);
    let start = backend.now();
    let root_fixing = search.root_fixing();
    let free = root_fixing.iter().filter(|&&f| f < 0).count();
    if free == 0 {
        let (x, obj) = search.solve(&root_fixing)?;
        let (x, obj) = search.polish(x, obj);
        let report = search.report(SolveStatus::Optimal, SolveMode::Continuous, &x, obj, obj);
        return Ok((x, report));
    }

    let heuristic = options.heuristic_only || free > options.exact_binary_limit;
    if heuristic && !options.heuristic_only {
        let msg = format!(
            "{free} binaries exceed the exact limit of {}; rounding the relaxation instead",
            options.exact_binary_limit
        );
        log::warn!("{msg}");
        search.warnings.push(msg);
    }

    let (root_x, root_bound) = search.solve(&root_fixing)?;
    if search.is_integral(&root_x) {
        let fixing = search.integral_fixing(&root_x, &root_fixing);
        let (x, obj) = search.settle(&fixing)?;
        let (x, obj) = search.polish(x, obj);
        let mode = if heuristic { SolveMode::Heuristic } else { SolveMode::BranchAndBound };
        let bound = root_bound.min(obj);
        let report = search.report(SolveStatus::Optimal, mode, &x, obj, bound);
        return Ok((x, report));
    }

    let rounded = search.rounding(&root_x, &root_fixing);
    let mut incumbent: Option<(Vec<f64>, f64)> = match search.solve(&rounded) {
        Ok(point) => Some(point),
        Err(SolveError::Infeasible) => None,
        Err(e) => return Err(e),
    };

    if heuristic {
        let (x, obj) = incumbent.ok_or(SolveError::NoIncumbent)?;
        let (x, obj) = search.polish(x, obj);
        let status = if search.gap_closed(obj, root_bound) { SolveStatus::Optimal } else { SolveStatus::GapLimit };
        let report = search.report(status, SolveMode::Heuristic, &x, obj, root_bound.min(obj));
        return Ok((x, report));
    }

    let mut heap = BinaryHeap::new();
    let mut next_id = 0u64;
    heap.push(Node { bound: root_bound, id: next_id, fixing: root_fixing, x: root_x });
    let mut status = SolveStatus::Optimal;
    let best_bound;
    loop {
        let Some(node) = heap.pop() else {
            best_bound = incumbent.as_ref().map_or(f64::INFINITY, |(_, v)| *v);
            break;
        };
        if let Some((_, inc)) = &incumbent {
            if search.gap_closed(*inc, node.bound) {
                best_bound = node.bound.min(*inc);
                break;
            }
        }
        if search.nodes() >= options.node_limit || search.elapsed_out(start) {
            status = if search.nodes() >= options.node_limit { SolveStatus::NodeLimit } else { SolveStatus::TimeLimit };
            best_bound = node.bound;
            break;
        }
        let Some(b) = search.most_fractional(&node.x, &node.fixing) else {
            // Integral within tolerance: settle it with a clean re-solve.
            let fixing = search.integral_fixing(&node.x, &node.fixing);
            if let Ok((x, obj)) = search.settle(&fixing) {
                if incumbent.as_ref().is_none_or(|(_, v)| obj < *v) {
                    incumbent = Some((x, obj));
                }
            }
            continue;
        };
        for value in [0i8, 1] {
            let fixing = search.child(&node.fixing, b, value);
            let (x, obj) = match search.solve(&fixing) {
                Ok(point) => point,
                Err(SolveError::Infeasible) => continue,
                Err(e) => return Err(e),
            };
            if let Some((_, inc)) = &incumbent {
                if search.gap_closed(*inc, obj) {
                    continue;
                }
            }
            if search.is_integral(&x) {
                let settled = search.integral_fixing(&x, &fixing);
                let (x, obj) = if settled == fixing { (x, obj) } else { search.settle(&settled)? };
                if incumbent.as_ref().is_none_or(|(_, v)| obj < *v) {
                    incumbent = Some((x, obj));
                }
                continue;
            }
            next_id += 1;
            heap.push(Node { bound: obj.max(node.bound), id: next_id, fixing, x });
        }
    }

    let (x, obj) = incumbent.ok_or(SolveError::NoIncumbent)?;
    let (x, obj) = search.polish(x, obj);
    let bound = best_bound.min(obj);
    if status == SolveStatus::Optimal && !search.gap_closed(obj, bound) {
        status = SolveStatus::GapLimit;
    }
    let report = search.report(status, SolveMode::BranchAndBound, &x, obj, bound);
    Ok((x, report))
}
