//! One experiment from a [`TopologySpec`]: boot, converge, verify, load,
//! failures, and the report directory that records it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use spanmq_bench::report::{write_csv, write_samples};
use spanmq_bench::{run_workload, WorkloadReport, WorkloadSpec};
use spanmq_core::broker::status::unix_ms;

use crate::mesh::{Launcher, Mark, Mesh};
use crate::timeline::{build_timeline, load_logs, write_timeline, TimelineRow};
use crate::topology::{Action, ClientGroup, TopologySpec};
use crate::verify::{verify_tree, Outcome, TreeCheck, TreeInput};
use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub launcher: Launcher,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub duration: Option<Duration>,
    /// Upper bound on each wait for quiescence.
    pub settle_timeout: Duration,
    pub bucket: Duration,
}

impl RunOptions {
    pub fn new(launcher: Launcher, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            launcher,
            out_dir: out_dir.into(),
            seed: None,
            duration: None,
            settle_timeout: Duration::from_secs(90),
            bucket: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventOutcome {
    pub label: String,
    pub applied_unix_ms: u64,
    /// Time from the event to the last role change it caused.
    pub reconvergence_ms: Option<u64>,
    pub tc_observed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub scenario: String,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub checks: Vec<TreeCheck>,
    pub inputs: Vec<TreeInput>,
    pub workloads: Vec<WorkloadReport>,
    /// Inter-broker PUBLISH transmissions per publication, by workload.
    pub forwards_per_message: Vec<Option<f64>>,
    pub events: Vec<EventOutcome>,
    pub bpdu_bytes: u64,
    pub publish_forwarded: BTreeMap<String, u64>,
    pub timeline: Vec<TimelineRow>,
    pub marks: Vec<Mark>,
    pub failures: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checks.iter().all(|c| c.outcome == Outcome::Pass)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run {} ({}), seed {}", self.name, self.scenario, self.seed);
        for c in &self.checks {
            let _ = writeln!(s, "tree {c}");
        }
        for e in &self.events {
            let _ = writeln!(
                s,
                "event {}: tc observed {}, reconverged after {}",
                e.label,
                e.tc_observed,
                e.reconvergence_ms.map_or("?".into(), |m| format!("{m} ms"))
            );
        }
        for (w, f) in self.workloads.iter().zip(&self.forwards_per_message) {
            let _ = write!(s, "{w}");
            if let Some(f) = f {
                let _ = writeln!(s, "  inter-broker publishes per message {f:.4}");
            }
        }
        let _ = writeln!(s, "bpdu bytes on bridges: {}", self.bpdu_bytes);
        for f in &self.failures {
            let _ = writeln!(s, "FAILURE: {f}");
        }
        let _ = writeln!(s, "result: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

fn workload_spec(spec: &TopologySpec, targets: Vec<spanmq_bench::Target>, seed: u64, duration: Duration, brokers: usize) -> WorkloadSpec {
    let mut w = WorkloadSpec::new(targets);
    w.scenario = spec.scenario.to_string();
    w.brokers = brokers;
    w.message_size = spec.workload.message_size;
    w.topic_count = spec.workload.topics;
    w.qos = spec.workload.qos();
    w.duration = duration;
    w.messages_per_publisher = spec.workload.messages;
    w.rate = spec.workload.rate;
    w.seed = seed;
    w
}

fn forwarded_total(mesh: &Mesh) -> u64 {
    mesh.statuses().values().map(|s| s.counters.publish_forwarded).sum()
}

#[allow(clippy::too_many_arguments)]
async fn run_load(
    mesh: &mut Mesh,
    spec: &TopologySpec,
    groups: &[ClientGroup],
    seed: u64,
    duration: Duration,
    events: &[(f64, Action)],
    settle: Duration,
    outcomes: &mut Vec<EventOutcome>,
    checks: &mut Vec<(TreeCheck, TreeInput)>,
) -> Result<(WorkloadReport, Option<f64>), HarnessError> {
    let targets = mesh.targets(groups).await?;
    let ws = workload_spec(spec, targets, seed, duration, mesh.running().len());
    let before = forwarded_total(mesh);
    mesh.mark(format!("publish {}", ws.scenario));
    let start = tokio::time::Instant::now();
    let load = run_workload(&ws);
    let driver = async {
        for (at, action) in events {
            tokio::time::sleep_until(start + Duration::from_secs_f64(*at)).await;
            apply(mesh, action, settle, outcomes, checks).await?;
        }
        Ok::<_, HarnessError>(())
    };
    let (report, driven) = tokio::join!(load, driver);
    driven?;
    let report = report?;
    mesh.mark("publish done");
    // let status files catch up with the counters
    tokio::time::sleep(Duration::from_millis(1500)).await;
    let per_msg = (events.is_empty() && report.published > 0)
        .then(|| (forwarded_total(mesh) - before) as f64 / report.published as f64);
    Ok((report, per_msg))
}

async fn apply(
    mesh: &mut Mesh,
    action: &Action,
    settle: Duration,
    outcomes: &mut Vec<EventOutcome>,
    checks: &mut Vec<(TreeCheck, TreeInput)>,
) -> Result<(), HarnessError> {
    let tc = |m: &Mesh| -> BTreeMap<String, u64> {
        m.statuses().into_iter().map(|(n, s)| (n, s.counters.tc_bpdu_sent)).collect()
    };
    let tc_before = tc(mesh);
    let applied = unix_ms();
    let label = match action {
        Action::Kill(b) => {
            mesh.kill(b).await?;
            format!("kill {b}")
        }
        Action::Restore(b) => {
            mesh.restore(b).await?;
            format!("restore {b}")
        }
    };
    let settled = match mesh.wait_quiescent(settle).await {
        Err(e @ HarnessError::Crash { .. }) => return Err(e),
        other => other,
    };
    // a restored broker starts with fresh counters
    let tc_observed = tc(mesh)
        .iter()
        .any(|(n, &after)| after > tc_before.get(n).copied().unwrap_or(0));
    let (check, input) = mesh.settle_and_verify(&format!("after {label}"), Duration::ZERO).await?;
    outcomes.push(EventOutcome {
        label,
        applied_unix_ms: applied,
        reconvergence_ms: settled.ok().map(|t| t.saturating_sub(applied)),
        tc_observed,
    });
    checks.push((check, input));
    Ok(())
}

/// Runs the scenario and writes its report directory.
pub async fn run_scenario(spec: &TopologySpec, opts: &RunOptions) -> Result<RunReport, HarnessError> {
    let seed = opts.seed.unwrap_or(spec.seed);
    let duration = opts.duration.unwrap_or(spec.workload.duration());
    std::fs::create_dir_all(&opts.out_dir)?;
    let started = unix_ms();
    let mut mesh = Mesh::launch(spec, opts.launcher.clone(), &opts.out_dir.join("brokers")).await?;
    let mut checks = Vec::new();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    let mut workloads = Vec::new();
    let mut per_msg = Vec::new();

    let result: Result<(), HarnessError> = async {
        let initial = mesh.settle_and_verify("initial", opts.settle_timeout).await?;
        mesh.mark("converged");
        checks.push(initial);
        let events: Vec<(f64, Action)> = spec.events.iter().map(|e| (e.at_s, e.action.clone())).collect();
        let groups = spec.client_groups();
        let (w, f) = run_load(
            &mut mesh,
            spec,
            &groups,
            seed,
            duration,
            &events,
            opts.settle_timeout,
            &mut outcomes,
            &mut checks,
        )
        .await?;
        workloads.push(w);
        per_msg.push(f);
        if !events.is_empty() {
            let live: Vec<ClientGroup> = groups.into_iter().filter(|g| mesh.is_running(&g.site)).collect();
            if live.iter().any(|g| g.publishers > 0) {
                let (w, f) = run_load(
                    &mut mesh,
                    spec,
                    &live,
                    seed.wrapping_add(1),
                    duration,
                    &[],
                    opts.settle_timeout,
                    &mut outcomes,
                    &mut checks,
                )
                .await?;
                workloads.push(w);
                per_msg.push(f);
            }
        }
        Ok(())
    }
    .await;
    if let Err(e) = result {
        failures.push(e.to_string());
    }
    for (name, log) in mesh.crashed() {
        failures.push(format!("broker {name} crashed: {log}"));
    }
    let last_idx = workloads.len().saturating_sub(1);
    for (i, w) in workloads.iter().enumerate() {
        let failure_free = spec.events.is_empty() || i == last_idx && i > 0;
        if failure_free && !w.publisher_errors.is_empty() {
            failures.push(format!("{}: publisher errors: {:?}", w.scenario, w.publisher_errors));
        }
        if failure_free && w.qos_is_exactly_once() && !w.exactly_once() {
            failures.push(format!(
                "{}: received {} of {} expected deliveries ({} duplicates)",
                w.scenario, w.received, w.expected_deliveries, w.duplicates
            ));
        }
        if !w.starved.is_empty() {
            failures.push(format!("{}: starved subscribers {:?}", w.scenario, w.starved));
        }
    }
    for (w, f) in workloads.iter().zip(&per_msg) {
        if let Some(f) = f {
            let k = w.brokers as f64;
            if (f - (k - 1.0)).abs() > 1e-9 {
                failures.push(format!("{}: {f:.4} inter-broker publishes per message, expected {}", w.scenario, k - 1.0));
            }
        }
    }
    let publish_forwarded = mesh
        .statuses()
        .into_iter()
        .map(|(n, s)| (n, s.counters.publish_forwarded))
        .collect();
    mesh.mark("end");
    let marks = mesh.marks().to_vec();
    let logs = mesh.event_logs();
    mesh.shutdown().await;
    let lines = load_logs(&logs);
    let timeline = build_timeline(&lines, &marks, started, opts.bucket.as_millis() as u64);
    let bpdu_bytes = timeline.iter().map(|r| r.bpdu_bytes).sum();
    let (checks, inputs) = checks.into_iter().unzip();
    let report = RunReport {
        name: spec.name.clone(),
        scenario: spec.scenario.to_string(),
        seed,
        started_unix_ms: started,
        checks,
        inputs,
        workloads,
        forwards_per_message: per_msg,
        events: outcomes,
        bpdu_bytes,
        publish_forwarded,
        timeline,
        marks,
        failures,
    };
    write_report(&opts.out_dir, &report)?;
    Ok(report)
}

pub fn write_report(dir: &Path, r: &RunReport) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(r).map_err(std::io::Error::other)?)?;
    let rows: Vec<_> = r.workloads.iter().map(|w| w.csv_row()).collect();
    write_csv(&dir.join("results.csv"), &rows)?;
    let mut tree = csv::Writer::from_path(dir.join("tree.csv"))?;
    tree.write_record(["check", "edge", "converged", "oracle"])?;
    for c in &r.checks {
        let mut all: Vec<&String> = c.edges.iter().chain(&c.oracle_edges).collect();
        all.sort();
        all.dedup();
        for e in all {
            tree.write_record([
                c.label.as_str(),
                e,
                &c.edges.contains(e).to_string(),
                &c.oracle_edges.contains(e).to_string(),
            ])?;
        }
    }
    tree.flush()?;
    write_timeline(&dir.join("timeline.csv"), &r.timeline)?;
    for (i, w) in r.workloads.iter().enumerate() {
        if !w.samples.is_empty() {
            write_samples(&dir.join(format!("latency-{i}.csv")), &w.samples)?;
        }
    }
    std::fs::write(dir.join("summary.txt"), r.summary())?;
    Ok(())
}

/// Re-runs every recorded tree check of a report directory.
pub fn verify_report_dir(dir: &Path) -> Result<Vec<TreeCheck>, HarnessError> {
    let text = std::fs::read_to_string(dir.join("report.json"))?;
    let r: RunReport = serde_json::from_str(&text).map_err(std::io::Error::other)?;
    Ok(r.inputs.iter().map(verify_tree).collect())
}
