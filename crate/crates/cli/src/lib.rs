//! Command implementations behind the `fsl` binary.

pub mod commands;
pub mod config;
pub mod report;
