//! Line-level genetic improvement of programs for fewer L1 data-cache misses.
//!
//! A target program is a [`source_model::SourceRoster`] of mutable lines. The
//! search engine explores [`source_model::Patch`]es of line edits, scoring
//! each through the fitness gates in [`evaluation`] with a measurement
//! [`drivers::Driver`]. The bundled simulator driver runs programs written in
//! a small trace language against a simulated set-associative LRU cache, so
//! every step of the pipeline is deterministic.

pub mod cachesim;
pub mod cli;
pub mod config;
pub mod drivers;
pub mod evaluation;
pub mod operators;
pub mod search_engine;
pub mod source_model;
pub mod stats;
