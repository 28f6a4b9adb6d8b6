//! Design and evaluation of active-controlled HIV prevention trials that
//! borrow a counterfactual placebo incidence estimate.
//!
//! Modules, bottom up:
//! - [`stats`]: normal distribution, log-incidence estimates, seeded RNG
//! - [`cf`]: counterfactual placebo models and their variance constants
//! - [`procedures`]: NI, two-step, conservative two-step and single-arm tests
//! - [`sizing`]: sample sizes and analytic operating characteristics
//! - [`mc`]: Monte Carlo operating characteristics and grid sweeps
//! - [`config`], [`commands`], [`report`], [`reproduce`]: scenario files,
//!   command implementations, CSV output and bundled reproduction targets

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cf;
pub mod commands;
pub mod config;
pub mod error;
pub mod mc;
pub mod procedures;
pub mod report;
pub mod reproduce;
pub mod sizing;
pub mod stats;

pub use cf::{CfPlaceboModel, RecencyAssay, VarianceConstants};
pub use config::{load_config, named_scenario, parse_config, ScenarioConfig};
pub use error::{Error, Result};
pub use mc::{
    operating_characteristics, sweep_grid, HypothesisState, OperatingCharacteristics,
    SimulationPlan,
};
pub use procedures::{RaeDesignSpec, TestOutcome};
pub use reproduce::{reproduce, ReproduceOptions, ReproduceReport, Target};
pub use sizing::{DesignKind, HistoricalTrial, IncidenceScenario, SizingResult};
pub use stats::{ArmSummary, LogIncidenceEstimate};

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible { .. } | Error::InfeasibleScenario { .. } => 2,
        _ => 1,
    }
}

/// Exit code for a reproduction that ran but did not match.
pub const EXIT_MISMATCH: i32 = 3;
