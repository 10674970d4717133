//! File formats, the Clarabel backend and the run pipeline around
//! `evflex-core`.

pub mod backend;
pub mod config;
pub mod error;
pub mod io;
pub mod montecarlo;
pub mod payment;
pub mod pipeline;

pub use backend::ClarabelBackend;
pub use config::{Mode, Overrides, RunConfig};
pub use error::RunError;
