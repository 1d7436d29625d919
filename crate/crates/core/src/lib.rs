//! Core of the exam cheating-detection agent.
//!
//! Everything here is pure computation over in-memory data and builds without
//! the standard library (an allocator is required). File formats, the CLI and
//! the network service live in the companion `examagent` crate.

#![no_std]

extern crate alloc;

pub mod encoding;
pub mod ipagent;
pub mod nn;
pub mod records;
pub mod models;
pub mod synth;
pub mod harness;
