//! Operator surface for vertically partitioned GLM sessions: run one party,
//! simulate both locally, benchmark against the full-data oracle, and run
//! reconstruction studies.

pub mod commands;
pub mod error;
pub mod ingest;
pub mod report;
pub mod runner;
pub mod trace_io;
