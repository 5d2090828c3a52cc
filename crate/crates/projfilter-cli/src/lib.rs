//! Experiment harness around the `projfilter` core: configuration schema,
//! experiment orchestration, and file output. The `projfilter` binary is a
//! thin command-line wrapper over this library, which keeps every run
//! drivable from tests.

pub mod config;
pub mod experiment;
pub mod output;

/// Process exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;
