//! File formats, data handling, metrics and the command-line front end for
//! `bowtie-core`.

pub mod cli;
pub mod data;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod parallel;

pub use error::CliError;
