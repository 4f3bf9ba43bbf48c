pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod stages;
