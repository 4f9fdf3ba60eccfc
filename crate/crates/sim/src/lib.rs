//! File formats, reporting and run orchestration for the `l2hsim` driver.
//!
//! The simulation itself lives in `l2h-core`; this crate reads traces and
//! configs, fans sweeps out over threads and writes CSV output.

pub mod config;
pub mod kv;
pub mod report;
pub mod runner;
pub mod trace;
pub mod workload;

pub use config::{IdleSelection, RunConfig};
pub use runner::{execute, RunManifest, RunOutput};
pub use trace::{read_trace, write_trace, Trace, TraceError};
