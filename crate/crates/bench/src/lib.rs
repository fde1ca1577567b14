//! Benchmark harness: synthetic objects, scenario files, seeded trial
//! matrices and aggregated tables.

pub mod objects;
pub mod report;
pub mod run;
pub mod scenario;

pub use report::{BenchSummary, Stat, SummaryRow};
pub use run::{prepare_trial, run_bench, run_trial, PreparedTrial};
pub use scenario::{LoadedObject, Scenario};
