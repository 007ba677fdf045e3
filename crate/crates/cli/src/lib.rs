//! Configuration-driven experiment pipeline for the `etcav` binary.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;
