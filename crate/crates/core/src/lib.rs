//! Generic main-memory indexing framework with a genetic optimizer for
//! physical index configurations.

pub mod builder;
pub mod config;
pub mod genetic;
pub mod layout;
pub mod model;
pub mod mutation;
pub mod physical;
pub mod search;
pub mod workload;

pub type Key = u64;
pub type Payload = u64;
