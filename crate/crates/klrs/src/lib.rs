//! IO and command-line layer over `klrs-core`: dataset CSV files, run
//! reports (JSON canonical, CSV trace projection) and the `klrs` CLI.

pub mod cli;
pub mod csv_io;
pub mod error;
pub mod report;

pub use error::{CliError, CliResult};
