//! Load generator: N publishers and M subscribers spread over one or more
//! brokers, QoS-2 gated publication throughput and end-to-end delay.

pub mod report;
pub mod stats;
pub mod workload;

pub use report::{CsvRow, WorkloadReport};
pub use stats::DelayStats;
pub use workload::{run_workload, LatencySample, Target, WorkloadError, WorkloadSpec};
