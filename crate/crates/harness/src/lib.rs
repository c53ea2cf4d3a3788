//! Experiment orchestration: topology specs, delay proxies, broker
//! processes, the tree oracle and scenario reports.

pub mod graphs;
pub mod mesh;
pub mod oracle;
pub mod proxy;
pub mod scenario;
pub mod sim;
pub mod timeline;
pub mod topology;
pub mod verify;

use std::time::Duration;

pub use mesh::{Launcher, Mesh};
pub use scenario::{run_scenario, verify_report_dir, RunOptions, RunReport};
pub use topology::{Scenario, TopologySpec};
pub use verify::{verify_tree, Outcome, TreeCheck};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Spec(#[from] topology::SpecError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Workload(#[from] spanmq_bench::WorkloadError),
    #[error("cannot start broker {name}: {reason}")]
    Spawn { name: String, reason: String },
    #[error("broker {name} crashed: {log}")]
    Crash { name: String, log: String },
    #[error("no quiescence after {waited:?}: {why}")]
    NotQuiescent { waited: Duration, why: String },
    #[error("unknown broker {0}")]
    UnknownBroker(String),
    #[error("broker {0} is not running")]
    NotRunning(String),
    #[error("broker {0} is already running")]
    AlreadyRunning(String),
    #[error("{0}")]
    Unreachable(String),
}
