//! Day-ahead flexibility planning for EV charging pools on radial
//! distribution networks.
//!
//! The crate is `no_std` (with `alloc`) and carries the algorithmic pieces:
//!
//! * [`netmodel`]: radial network and charging-pool data in per-unit form,
//! * [`scenario`]: seeded charging-task scenario generation,
//! * [`utility`]: lower-semicontinuous piecewise-linear compensation costs
//!   and their mixed-integer encoding,
//! * [`sopf`]: assembly of the two-stage stochastic branch-flow OPF as a
//!   solver-independent conic program,
//! * [`conic`]: branch-and-bound and rounding over a pluggable continuous
//!   SOCP backend, plus relaxation exactness checks,
//! * [`flexarea`]: empirical CDFs of the scenario mismatch power and the
//!   risk-parameterized flexibility areas,
//! * [`validate`]: backward/forward sweep power flow, Monte-Carlo area
//!   validation and pool payment analysis.
//!
//! IO, file formats, the SOCP backend and the command-line front
//! end live in the `evflex` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod conic;
pub mod flexarea;
pub mod netmodel;
pub mod rng;
pub mod scenario;
pub mod sopf;
pub mod utility;
pub mod validate;

pub use conic::{
    check_exactness, solve_misocp, solve_socp, ConicBackend, ExactnessReport, SolveError,
    SolveReport, SolveStatus, SolverOptions,
};
pub use flexarea::{build_ecdf, flexibility_areas, BetaSpec, Ecdf, FlexibilityArea};
pub use netmodel::{Branch, ChargingPoolSpec, NetworkModel, PerUnitBase, RadialDiagnostic};
pub use scenario::{generate_scenarios, scenario_stats, Realization, ScenarioSet, TaskSpec};
pub use sopf::{
    base_case_program, build_sopf, extract_solution, BuildOptions, ConicProgram, SopfSolution,
};
pub use utility::{evaluate_utility, UtilityFunction};
pub use validate::{mc_validate, payment_analysis, power_flow, PaymentReport, ValidationReport};
