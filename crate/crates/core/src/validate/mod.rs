//! Checking plans against the physics: sweep power flow, Monte-Carlo
//! validation of flexibility areas and pool payments.

pub mod montecarlo;
pub mod payment;
pub mod powerflow;

pub use montecarlo::{aggregate, mc_simulation, mc_validate, AreaGrid, SimOutcome, ValidateError, ValidationReport};
pub use payment::{payment_analysis, payment_scenarios, DistributionSummary, PaymentReport, PaymentScenario};
pub use powerflow::{power_flow, power_flow_period, PowerFlowError, PowerFlowOptions, PowerFlowState};
