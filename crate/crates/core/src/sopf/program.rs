//! Solver-independent mixed-integer conic program.
//!
//! A program is a list of bounded variables (continuous or binary), sparse
//! linear rows, rotated second-order cones and a linear objective. Every
//! variable and row carries a structured key naming the model quantity it
//! represents.
//!
//! # Text dump
//!
//! [`ConicProgram::dump`] writes one record per line, floats in shortest
//! round-trip form:
//!
//! ```text
//! evflex-conic 1
//! size <vars> <rows> <cones>
//! offset <objective constant>
//! v <idx> <key> <C|B> <lower> <upper> <cost>
//! r <idx> <tag> <=|<=|>=> <rhs> <var>:<coef> ...
//! k <idx> <v> <i> <tail var> ...
//! ```
//!
//! A cone record `k` means `v·i ≥ Σ tail²` with `v, i ≥ 0`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::utility::UtilityFunction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarKey {
    /// First-stage power reserve `p[s,t]`, kW.
    Reserve { pool: u32, period: u32 },
    /// Mismatch `rho[s,t,w]`, kW.
    Mismatch { pool: u32, period: u32, scenario: u32 },
    /// Task charging power `x[n,t,w]`, kW.
    TaskPower { task: u32, period: u32, scenario: u32 },
    /// Task energy not served `phi[n,w]`, kWh.
    TaskEns { task: u32, scenario: u32 },
    /// Pool energy not served `Phi[s,w]`, kWh.
    PoolEns { pool: u32, scenario: u32 },
    /// Pool flexibility cost `Z[s,w]`.
    PoolCost { pool: u32, scenario: u32 },
    LambdaLower { pool: u32, point: u32, scenario: u32 },
    LambdaUpper { pool: u32, point: u32, scenario: u32 },
    /// Segment selector `y[s,k,w]`, k ≥ 1.
    Segment { pool: u32, segment: u32, scenario: u32 },
    VoltageSq { node: u32, period: u32, scenario: u32 },
    CurrentSq { branch: u32, period: u32, scenario: u32 },
    FlowP { branch: u32, period: u32, scenario: u32 },
    FlowQ { branch: u32, period: u32, scenario: u32 },
    Aux(u32),
}

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use VarKey::*;
        match *self {
            Reserve { pool, period } => write!(f, "p[s{pool},t{period}]"),
            Mismatch { pool, period, scenario } => write!(f, "rho[s{pool},t{period},w{scenario}]"),
            TaskPower { task, period, scenario } => write!(f, "x[n{task},t{period},w{scenario}]"),
            TaskEns { task, scenario } => write!(f, "phi[n{task},w{scenario}]"),
            PoolEns { pool, scenario } => write!(f, "Phi[s{pool},w{scenario}]"),
            PoolCost { pool, scenario } => write!(f, "Z[s{pool},w{scenario}]"),
            LambdaLower { pool, point, scenario } => write!(f, "lam_lo[s{pool},k{point},w{scenario}]"),
            LambdaUpper { pool, point, scenario } => write!(f, "lam_hi[s{pool},k{point},w{scenario}]"),
            Segment { pool, segment, scenario } => write!(f, "y[s{pool},k{segment},w{scenario}]"),
            VoltageSq { node, period, scenario } => write!(f, "V2[i{node},t{period},w{scenario}]"),
            CurrentSq { branch, period, scenario } => write!(f, "I2[b{branch},t{period},w{scenario}]"),
            FlowP { branch, period, scenario } => write!(f, "P[b{branch},t{period},w{scenario}]"),
            FlowQ { branch, period, scenario } => write!(f, "Q[b{branch},t{period},w{scenario}]"),
            Aux(i) => write!(f, "aux{i}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RowTag {
    /// `p + rho - Σ x = 0`
    PoolBalance { pool: u32, period: u32, scenario: u32 },
    /// `p + rho <= p_max`
    PoolCapacity { pool: u32, period: u32, scenario: u32 },
    /// `Σ x Δt + phi = E`
    TaskEnergy { task: u32, scenario: u32 },
    /// `Phi - Σ phi = 0`
    PoolEnsSum { pool: u32, scenario: u32 },
    /// `Z - Σ λ u = 0`
    UtilityCost { pool: u32, scenario: u32 },
    /// `Phi - Σ λ α = 0`
    UtilityEnergy { pool: u32, scenario: u32 },
    /// `Σ λ = 1`
    UtilityWeights { pool: u32, scenario: u32 },
    /// `λhi[k-1] + λlo[k] - y[k] = 0`
    UtilityLink { pool: u32, segment: u32, scenario: u32 },
    /// `Σ y <= 1`
    SegmentChoice { pool: u32, scenario: u32 },
    ActiveBalance { node: u32, period: u32, scenario: u32 },
    ReactiveBalance { node: u32, period: u32, scenario: u32 },
    VoltageDrop { branch: u32, period: u32, scenario: u32 },
    Aux(u32),
}

impl fmt::Display for RowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use RowTag::*;
        match *self {
            PoolBalance { pool, period, scenario } => {
                write!(f, "pool_balance[s{pool},t{period},w{scenario}]")
            }
            PoolCapacity { pool, period, scenario } => {
                write!(f, "pool_capacity[s{pool},t{period},w{scenario}]")
            }
            TaskEnergy { task, scenario } => write!(f, "task_energy[n{task},w{scenario}]"),
            PoolEnsSum { pool, scenario } => write!(f, "pool_ens[s{pool},w{scenario}]"),
            UtilityCost { pool, scenario } => write!(f, "utility_cost[s{pool},w{scenario}]"),
            UtilityEnergy { pool, scenario } => write!(f, "utility_energy[s{pool},w{scenario}]"),
            UtilityWeights { pool, scenario } => write!(f, "utility_weights[s{pool},w{scenario}]"),
            UtilityLink { pool, segment, scenario } => {
                write!(f, "utility_link[s{pool},k{segment},w{scenario}]")
            }
            SegmentChoice { pool, scenario } => write!(f, "segment_choice[s{pool},w{scenario}]"),
            ActiveBalance { node, period, scenario } => {
                write!(f, "active_balance[i{node},t{period},w{scenario}]")
            }
            ReactiveBalance { node, period, scenario } => {
                write!(f, "reactive_balance[i{node},t{period},w{scenario}]")
            }
            VoltageDrop { branch, period, scenario } => {
                write!(f, "voltage_drop[b{branch},t{period},w{scenario}]")
            }
            Aux(i) => write!(f, "row{i}"),
        }
    }
}

impl RowTag {
    /// Rows that may legitimately reference binaries.
    pub fn is_utility_row(&self) -> bool {
        matches!(
            self,
            RowTag::UtilityLink { .. } | RowTag::SegmentChoice { .. } | RowTag::Aux(_)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub key: VarKey,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    /// Objective coefficient.
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Eq => "=",
            Sense::Le => "<=",
            Sense::Ge => ">=",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub tag: RowTag,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Signed amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let r = self.activity(x) - self.rhs;
        match self.sense {
            Sense::Eq => r.abs(),
            Sense::Le => r.max(0.0),
            Sense::Ge => (-r).max(0.0),
        }
    }

    /// Scale used to judge violations: `1 + |rhs| + Σ |a_j x_j|`.
    pub fn magnitude(&self, x: &[f64]) -> f64 {
        1.0 + self.rhs.abs() + self.coeffs.iter().map(|&(j, a)| (a * x[j]).abs()).sum::<f64>()
    }
}

/// `v·i ≥ Σ tail²`, `v, i ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotatedCone {
    pub v: usize,
    pub i: usize,
    pub tail: Vec<usize>,
}

impl RotatedCone {
    /// `(v·i − Σ tail²) / max(1, v·i)`; negative when the point is outside.
    pub fn gap(&self, x: &[f64]) -> f64 {
        let vi = x[self.v] * x[self.i];
        let sq: f64 = self.tail.iter().map(|&j| x[j] * x[j]).sum();
        (vi - sq) / vi.max(1.0)
    }
}

/// Binaries that choose the active segment of one pool's utility in one
/// scenario, together with what is needed to round and polish them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityGroup {
    pub pool: usize,
    pub scenario: usize,
    pub phi: usize,
    pub cost: usize,
    pub lambda_lower: Vec<usize>,
    pub lambda_upper: Vec<usize>,
    /// `y[k]` for k = 1..κ, in order.
    pub segments: Vec<usize>,
    pub utility: UtilityFunction,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub variables: Vec<Variable>,
    pub rows: Vec<Row>,
    pub cones: Vec<RotatedCone>,
    pub objective_offset: f64,
    pub utility_groups: Vec<UtilityGroup>,
    pub layout: Option<super::SopfLayout>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProgramDefect {
    ConeVariableMissing { cone: usize },
    ConeVariableNotNonnegative { cone: usize, var: usize },
    RowVariableMissing { row: usize },
    BinaryOutsideUtility { row: usize, var: usize },
    InvalidBounds { var: usize },
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, key: VarKey, kind: VarKind, lower: f64, upper: f64) -> usize {
        self.variables.push(Variable { key, kind, lower, upper, cost: 0.0 });
        self.variables.len() - 1
    }

    pub fn add_continuous(&mut self, key: VarKey, lower: f64, upper: f64) -> usize {
        self.add_var(key, VarKind::Continuous, lower, upper)
    }

    pub fn add_binary(&mut self, key: VarKey) -> usize {
        self.add_var(key, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_row(&mut self, tag: RowTag, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Row { tag, coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn add_cone(&mut self, v: usize, i: usize, tail: Vec<usize>) -> usize {
        self.cones.push(RotatedCone { v, i, tail });
        self.cones.len() - 1
    }

    pub fn add_cost(&mut self, var: usize, coef: f64) {
        self.variables[var].cost += coef;
    }

    pub fn binary_indices(&self) -> Vec<usize> {
        (0..self.variables.len()).filter(|&j| self.variables[j].kind == VarKind::Binary).collect()
    }

    pub fn binary_count(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.variables.iter().zip(x).map(|(v, xi)| v.cost * xi).sum::<f64>()
    }

    /// Structural invariants: cone members exist and are nonnegative,
    /// row references resolve, binaries only in utility rows.
    pub fn check(&self) -> Result<(), ProgramDefect> {
        let n = self.variables.len();
        for (j, v) in self.variables.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(ProgramDefect::InvalidBounds { var: j });
            }
        }
        for (c, cone) in self.cones.iter().enumerate() {
            if cone.v >= n || cone.i >= n || cone.tail.iter().any(|&j| j >= n) {
                return Err(ProgramDefect::ConeVariableMissing { cone: c });
            }
            for var in [cone.v, cone.i] {
                if !(self.variables[var].lower >= 0.0) {
                    return Err(ProgramDefect::ConeVariableNotNonnegative { cone: c, var });
                }
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            for &(j, _) in &row.coeffs {
                if j >= n {
                    return Err(ProgramDefect::RowVariableMissing { row: r });
                }
                if self.variables[j].kind == VarKind::Binary && !row.tag.is_utility_row() {
                    return Err(ProgramDefect::BinaryOutsideUtility { row: r, var: j });
                }
            }
        }
        Ok(())
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        self.write_dump(&mut out).expect("writing to a String cannot fail");
        out
    }

    pub fn write_dump<W: Write>(&self, out: &mut W) -> fmt::Result {
        writeln!(out, "evflex-conic 1")?;
        writeln!(out, "size {} {} {}", self.variables.len(), self.rows.len(), self.cones.len())?;
        writeln!(out, "offset {:?}", self.objective_offset)?;
        for (j, v) in self.variables.iter().enumerate() {
            let kind = match v.kind {
                VarKind::Continuous => 'C',
                VarKind::Binary => 'B',
            };
            writeln!(out, "v {j} {} {kind} {:?} {:?} {:?}", v.key, v.lower, v.upper, v.cost)?;
        }
        for (r, row) in self.rows.iter().enumerate() {
            write!(out, "r {r} {} {} {:?}", row.tag, row.sense, row.rhs)?;
            for &(j, a) in &row.coeffs {
                write!(out, " {j}:{a:?}")?;
            }
            writeln!(out)?;
        }
        for (c, cone) in self.cones.iter().enumerate() {
            write!(out, "k {c} {} {}", cone.v, cone.i)?;
            for j in &cone.tail {
                write!(out, " {j}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn dump_lists_every_record() {
        let mut p = ConicProgram::new();
        let x = p.add_continuous(VarKey::Aux(0), 0.0, f64::INFINITY);
        let y = p.add_continuous(VarKey::Aux(1), 0.0, 1.0);
        p.add_cost(x, 1.0);
        p.add_row(RowTag::Aux(0), vec![(x, 1.0), (y, -2.5)], Sense::Ge, 3.0);
        p.add_cone(x, y, vec![x]);
        let text = p.dump();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "evflex-conic 1");
        assert_eq!(lines[1], "size 2 1 1");
        assert_eq!(lines[3], "v 0 aux0 C 0.0 inf 1.0");
        assert_eq!(lines[5], "r 0 row0 >= 3.0 0:1.0 1:-2.5");
        assert_eq!(lines[6], "k 0 0 1 0");
    }

    #[test]
    fn check_flags_binary_in_network_row() {
        let mut p = ConicProgram::new();
        let y = p.add_binary(VarKey::Aux(0));
        p.add_row(RowTag::VoltageDrop { branch: 0, period: 0, scenario: 0 }, vec![(y, 1.0)], Sense::Eq, 0.0);
        assert_eq!(p.check(), Err(ProgramDefect::BinaryOutsideUtility { row: 0, var: y }));
    }

    #[test]
    fn cone_members_must_be_nonnegative() {
        let mut p = ConicProgram::new();
        let v = p.add_continuous(VarKey::Aux(0), f64::NEG_INFINITY, f64::INFINITY);
        let i = p.add_continuous(VarKey::Aux(1), 0.0, f64::INFINITY);
        p.add_cone(v, i, vec![]);
        assert_eq!(p.check(), Err(ProgramDefect::ConeVariableNotNonnegative { cone: 0, var: v }));
    }

    #[test]
    fn cone_gap_matches_definition() {
        let cone = RotatedCone { v: 0, i: 1, tail: vec![2, 3] };
        let x = [2.0, 3.0, 1.0, 2.0];
        assert!((cone.gap(&x) - (6.0 - 5.0) / 6.0).abs() < 1e-15);
        let x = [0.5, 0.5, 0.5, 0.0];
        assert_eq!(cone.gap(&x), 0.0);
    }
}
