//! Scenario files, run orchestration, sweeps and artifact output for the
//! `rhfs` command-line tool.

pub mod checks;
pub mod error;
pub mod output;
pub mod run;
pub mod scenario;
pub mod sweep;

pub use error::{CliError, Result};
pub use run::{run, Manifest, RunOutcome, RunStatus};
pub use scenario::{Axis, Scenario};
pub use sweep::{sweep, worker_count, SweepManifest};
