//! File formats, run directories, experiment runners, plots and the command
//! line for `sfmgtl-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod plots;
pub mod rundir;
pub mod runner;
pub mod tables;

pub use error::{Error, Result};
