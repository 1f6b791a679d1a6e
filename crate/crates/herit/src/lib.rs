//! File formats, reports and commands for the `herit` binary.

pub mod cli;
pub mod commands;
pub mod error;
pub mod io;
pub mod report;
