use evflex_core::flexarea::FlexAreaError;
use evflex_core::scenario::ScenarioError;
use evflex_core::sopf::{BuildError, ExtractError};
use evflex_core::validate::payment::PaymentError;
use evflex_core::validate::ValidateError;
use evflex_core::{SolveError, SolveStatus};
use serde_json::json;
use thiserror::Error;

use crate::config::ConfigError;
use crate::io::IoError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input: {0}")]
    Input(IoError),
    #[error("output: {0}")]
    Output(IoError),
    #[error("scenarios: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("{stage}: model: {source}")]
    Build { stage: &'static str, source: BuildError },
    #[error("{stage}: {source}")]
    Solve { stage: &'static str, source: SolveError },
    #[error("{stage}: {source}")]
    Extract { stage: &'static str, source: ExtractError },
    #[error("areas: {0}")]
    Areas(#[from] FlexAreaError),
    #[error("validation: {0}")]
    Validate(#[from] ValidateError),
    #[error("payment: {0}")]
    Payment(#[from] PaymentError),
}

impl RunError {
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "infeasible",
            4 => "solver_limit",
            _ => "error",
        }
    }

    /// 0 ok, 2 configuration, 3 infeasible, 4 solver limit, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        let by_status = |s: SolveStatus| match s {
            SolveStatus::Infeasible => 3,
            SolveStatus::IterationLimit | SolveStatus::TimeLimit | SolveStatus::NodeLimit | SolveStatus::GapLimit => 4,
            _ => 1,
        };
        match self {
            RunError::Config(_) | RunError::Input(_) | RunError::Scenario(_) | RunError::Build { .. } => 2,
            RunError::Areas(FlexAreaError::Beta(_) | FlexAreaError::BetaShape { .. }) => 2,
            RunError::Validate(ValidateError::MissingArea { .. } | ValidateError::InvertedArea { .. }) => 2,
            RunError::Solve { source: SolveError::InvalidOptions, .. } => 2,
            RunError::Solve { source, .. } => by_status(source.status()),
            RunError::Extract { source: ExtractError::NoPoint(s), .. } => by_status(*s),
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() } })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_failure_class() {
        let solve = |source| RunError::Solve { stage: "plan", source };
        assert_eq!(RunError::Config(ConfigError::Invalid("x".into())).exit_code(), 2);
        assert_eq!(solve(SolveError::Infeasible).exit_code(), 3);
        assert_eq!(solve(SolveError::TimeLimit).exit_code(), 4);
        assert_eq!(solve(SolveError::NoIncumbent).exit_code(), 4);
        assert_eq!(solve(SolveError::Numerical).exit_code(), 1);
        assert_eq!(RunError::Areas(FlexAreaError::Beta(1.5)).exit_code(), 2);
    }
}
