//! Command-line scenarios for Koopman port-Hamiltonian surrogates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod export;
pub mod injectivity;
pub mod report;
pub mod scenarios;
pub mod setup;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use report::{Bound, Check, Report};
pub use scenarios::{run_scenario, Scenario};
