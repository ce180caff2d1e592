//! Experiment harness around `emspy-core`: plans, IQ files, dataset
//! stores, training and evaluation runs, sweeps and report bundles.
//!
//! Every command writes into a run directory laid out by [`layout::Layout`]
//! and stamps its artifacts with the SHA-256 of the resolved plan.

pub mod analysis;
mod error;
pub mod fsutil;
pub mod iqfile;
pub mod layout;
pub mod plan;
pub mod process;
pub mod report;
pub mod run;
pub mod store;
pub mod sweep;
pub mod synth;

pub use error::{HarnessError, Result};
pub use layout::Layout;
pub use plan::{Db, ExperimentPlan, Profile};
pub use report::ReportBundle;
pub use sweep::{SweepKind, SweepResult};
