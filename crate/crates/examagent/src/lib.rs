//! File formats, configuration, benchmark runner and the live proctoring
//! service built on `examagent-core`.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod records_csv;
pub mod report;
pub mod service;

pub use examagent_core as core;
