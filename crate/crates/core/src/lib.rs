//! Core library for the toolforge harness: action-program parsing, BM25
//! retrieval, prompt assembly, completion backends, simulated tool
//! environments, evaluation metrics, and alignment-data generation.

pub mod actiongen;
pub mod backend;
pub mod datagen;
pub mod envs;
pub mod metrics;
pub mod program;
pub mod prompt;
pub mod retrieval;
pub mod runner;
pub mod spec;
