//! The operational shell around the distributed classifier: a
//! discrete-event simulation of nodes and fusion center with byte-level
//! message accounting, weight files, run configuration, report files and
//! the shared run steps behind the `bwnet` CLI.

pub mod config;
pub mod error;
pub mod report;
pub mod sim;
pub mod weights;
pub mod workflow;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
pub use report::{emit_report, ReportFiles};
pub use sim::{reconcile, simulate_run, Message, MessageLog, SimOutcome};
pub use weights::{load_weights, load_weights_into, save_weights};
