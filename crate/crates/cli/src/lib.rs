//! Run orchestration for the `nlcontrol` binary: configuration files,
//! bundled presets, output writing and the preset reproduction suite.

pub mod config;
pub mod presets;
pub mod reproduce;
pub mod runner;
