//! Experiment harness: configuration, search runs, upscaling, latency
//! comparisons and artifact export.

pub mod config;
pub mod harness;
pub mod poc;
