//! IO, file formats, run configuration and the `cavion` command line.
//!
//! The companion to the `cavion` core crate: everything that touches the
//! filesystem or a thread pool lives here — JSON configs with paper-default
//! presets, the binary time-tag format, CSV emitters and readers, run
//! manifests with content hashes, parallel trial execution, and the
//! figure-reproduction recipes behind `cavion report`.

pub mod cli;
pub mod config;
pub mod csvio;
pub mod manifest;
pub mod parallel;
pub mod presets;
pub mod report;
pub mod summaries;
pub mod timetags;

mod error;

pub use error::{CliError, ExitCode};

pub type Result<T> = std::result::Result<T, CliError>;
