//! A running set of brokers wired through delay proxies.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::process::{Child, Command};

use spanmq_bench::Target;
use spanmq_core::broker::status::unix_ms;
use spanmq_core::broker::{self, BrokerHandle, BrokerStatus};
use spanmq_core::config::BrokerConfig;
use spanmq_core::{compute_capability, BrokerId};

use crate::proxy::DelayProxy;
use crate::topology::{ClientGroup, Scenario, TopologySpec};
use crate::verify::{verify_tree, TreeBroker, TreeCheck, TreeInput, TreeLink};
use crate::HarnessError;

/// How brokers are started.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Launcher {
    /// Separate `spanmq-broker` processes; killing one is a SIGKILL.
    Process(PathBuf),
    /// Brokers on the harness runtime; killing one drops all its sockets.
    InProcess,
}

impl Launcher {
    pub const ENV: &'static str = "SPANMQ_BROKER_BIN";

    /// `$SPANMQ_BROKER_BIN`, else a `spanmq-broker` next to the running
    /// executable (or one directory up, for test binaries).
    pub fn find() -> Option<Self> {
        if let Some(p) = std::env::var_os(Self::ENV) {
            return Some(Self::Process(p.into()));
        }
        let exe = std::env::current_exe().ok()?;
        let dir = exe.parent()?;
        [dir.join("spanmq-broker"), dir.parent()?.join("spanmq-broker")]
            .into_iter()
            .find(|p| p.is_file())
            .map(Self::Process)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mark {
    pub t_ms: u64,
    pub label: String,
}

enum Running {
    Child(Child),
    Local(BrokerHandle),
}

struct Slot {
    name: String,
    port: u16,
    capability: Option<(u64, u64)>,
    peers: Vec<SocketAddr>,
    dir: PathBuf,
    running: Option<Running>,
    started_ms: u64,
    /// Capability the broker reported, kept across restarts.
    reported_capability: Option<u64>,
}

impl Slot {
    fn id(&self) -> BrokerId {
        BrokerId::new(Ipv4Addr::LOCALHOST, self.port)
    }

    fn status_path(&self) -> PathBuf {
        self.dir.join("status.json")
    }

    fn log_path(&self) -> PathBuf {
        self.dir.join("events.log")
    }

    fn output_path(&self) -> PathBuf {
        self.dir.join("broker.out")
    }
}

pub struct Mesh {
    spec: TopologySpec,
    launcher: Launcher,
    slots: Vec<Slot>,
    /// Bridge-link proxies; kept alive for the life of the mesh.
    _link_proxies: Vec<DelayProxy>,
    client_proxies: Vec<DelayProxy>,
    marks: Vec<Mark>,
    pub started_ms: u64,
}

fn free_port() -> std::io::Result<u16> {
    Ok(std::net::TcpListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

impl Mesh {
    /// Starts the scenario's brokers under `dir` and the delay proxies
    /// between them. Does not wait for convergence.
    pub async fn launch(spec: &TopologySpec, launcher: Launcher, dir: &Path) -> Result<Self, HarnessError> {
        spec.validate()?;
        let mut slots = Vec::new();
        for b in &spec.brokers {
            let port = if b.port == 0 { free_port()? } else { b.port };
            let bdir = dir.join(&b.name);
            std::fs::create_dir_all(&bdir)?;
            slots.push(Slot {
                name: b.name.clone(),
                port,
                capability: b.capability,
                peers: Vec::new(),
                dir: bdir,
                running: None,
                started_ms: 0,
                reported_capability: None,
            });
        }
        let mut proxies = Vec::new();
        for l in spec.active_links() {
            let a = spec.broker_index(&l.a).unwrap();
            let b = spec.broker_index(&l.b).unwrap();
            for (from, to) in [(a, b), (b, a)] {
                let upstream = SocketAddr::from((Ipv4Addr::LOCALHOST, slots[to].port));
                let p = DelayProxy::start(upstream, l.delay()).await?;
                slots[from].peers.push(p.local_addr());
                proxies.push(p);
            }
        }
        let mut mesh = Self {
            spec: spec.clone(),
            launcher,
            slots,
            _link_proxies: proxies,
            client_proxies: Vec::new(),
            marks: Vec::new(),
            started_ms: unix_ms(),
        };
        mesh.mark("boot");
        for i in spec.running() {
            mesh.start_slot(i).await?;
        }
        Ok(mesh)
    }

    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    fn config_for(&self, i: usize) -> BrokerConfig {
        let s = &self.slots[i];
        BrokerConfig {
            peers: s.peers.iter().map(ToString::to_string).collect(),
            keep_alive: self.spec.keep_alive,
            alpha: self.spec.alpha,
            beta: self.spec.beta,
            listen_port: s.port,
            listen_address: Ipv4Addr::LOCALHOST,
            advertise_address: None,
            capability: s.capability,
            status_file: Some(s.status_path()),
            event_log: Some(s.log_path()),
        }
    }

    async fn start_slot(&mut self, i: usize) -> Result<(), HarnessError> {
        let cfg = self.config_for(i);
        let slot = &self.slots[i];
        // a stale snapshot must not count as a live one
        let _ = std::fs::remove_file(slot.status_path());
        let running = match &self.launcher {
            Launcher::Process(bin) => {
                let conf = slot.dir.join("broker.conf");
                std::fs::write(&conf, cfg.to_text())?;
                let out = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(slot.output_path())?;
                let child = Command::new(bin)
                    .arg("--config")
                    .arg(&conf)
                    .env("RUST_LOG", std::env::var("RUST_LOG").unwrap_or_else(|_| "info".into()))
                    .stdin(Stdio::null())
                    .stdout(out.try_clone()?)
                    .stderr(out)
                    .kill_on_drop(true)
                    .spawn()
                    .map_err(|e| HarnessError::Spawn {
                        name: slot.name.clone(),
                        reason: format!("{}: {e}", bin.display()),
                    })?;
                Running::Child(child)
            }
            Launcher::InProcess => Running::Local(broker::start(cfg).await.map_err(|e| {
                HarnessError::Spawn {
                    name: slot.name.clone(),
                    reason: e.to_string(),
                }
            })?),
        };
        let slot = &mut self.slots[i];
        slot.running = Some(running);
        slot.started_ms = unix_ms();
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.slots.iter().map(|s| s.name.clone()).collect()
    }

    fn index(&self, name: &str) -> Result<usize, HarnessError> {
        self.spec
            .broker_index(name)
            .ok_or_else(|| HarnessError::UnknownBroker(name.into()))
    }

    pub fn id(&self, name: &str) -> Result<BrokerId, HarnessError> {
        Ok(self.slots[self.index(name)?].id())
    }

    pub fn name_of(&self, id: BrokerId) -> Option<&str> {
        self.slots.iter().find(|s| s.id() == id).map(|s| s.name.as_str())
    }

    /// Direct MQTT address of a broker.
    pub fn addr(&self, name: &str) -> Result<SocketAddr, HarnessError> {
        Ok(SocketAddr::from((Ipv4Addr::LOCALHOST, self.slots[self.index(name)?].port)))
    }

    pub fn is_running(&self, name: &str) -> bool {
        self.index(name).is_ok_and(|i| self.slots[i].running.is_some())
    }

    pub fn running(&self) -> Vec<String> {
        self.slots
            .iter()
            .filter(|s| s.running.is_some())
            .map(|s| s.name.clone())
            .collect()
    }

    pub fn mark(&mut self, label: impl Into<String>) {
        let label = label.into();
        tracing::info!("mark: {label}");
        self.marks.push(Mark {
            t_ms: unix_ms(),
            label,
        });
    }

    pub fn marks(&self) -> &[Mark] {
        &self.marks
    }

    pub fn event_logs(&self) -> Vec<PathBuf> {
        self.slots.iter().map(Slot::log_path).collect()
    }

    pub fn broker_dir(&self, name: &str) -> Result<PathBuf, HarnessError> {
        Ok(self.slots[self.index(name)?].dir.clone())
    }

    /// Ungraceful stop: the process is killed, sockets close without
    /// DISCONNECT.
    pub async fn kill(&mut self, name: &str) -> Result<(), HarnessError> {
        let i = self.index(name)?;
        match self.slots[i].running.take() {
            None => return Err(HarnessError::NotRunning(name.into())),
            Some(Running::Child(mut c)) => {
                let _ = c.kill().await;
            }
            Some(Running::Local(h)) => h.shutdown().await,
        }
        self.mark(format!("kill {name}"));
        Ok(())
    }

    pub async fn restore(&mut self, name: &str) -> Result<(), HarnessError> {
        let i = self.index(name)?;
        if self.slots[i].running.is_some() {
            return Err(HarnessError::AlreadyRunning(name.into()));
        }
        self.start_slot(i).await?;
        self.mark(format!("restore {name}"));
        Ok(())
    }

    /// Brokers that exited without being told to.
    pub fn crashed(&mut self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for s in &mut self.slots {
            if let Some(Running::Child(c)) = &mut s.running {
                if let Ok(Some(code)) = c.try_wait() {
                    let log = std::fs::read_to_string(s.output_path()).unwrap_or_default();
                    let tail: Vec<&str> = log.lines().rev().take(20).collect();
                    let tail: Vec<&str> = tail.into_iter().rev().collect();
                    out.push((s.name.clone(), format!("exited with {code}\n{}", tail.join("\n"))));
                    s.running = None;
                }
            }
        }
        out
    }

    fn fail_on_crash(&mut self) -> Result<(), HarnessError> {
        match self.crashed().into_iter().next() {
            Some((name, log)) => Err(HarnessError::Crash { name, log }),
            None => Ok(()),
        }
    }

    /// Latest snapshot of every running broker written since its last start.
    pub fn statuses(&self) -> BTreeMap<String, BrokerStatus> {
        self.slots
            .iter()
            .filter(|s| s.running.is_some())
            .filter_map(|s| {
                let st = BrokerStatus::read(&s.status_path()).ok()?;
                (st.updated_unix_ms >= s.started_ms.saturating_sub(1000)).then(|| (s.name.clone(), st))
            })
            .collect()
    }

    pub fn status(&self, name: &str) -> Option<BrokerStatus> {
        self.statuses().remove(name)
    }

    pub fn hello_interval(&self) -> Duration {
        Duration::from_secs(self.spec.keep_alive.into()) / 2
    }

    /// Running neighbours of every running broker, by id.
    fn expected_links(&self) -> BTreeMap<String, BTreeSet<BrokerId>> {
        let mut m: BTreeMap<String, BTreeSet<BrokerId>> = self
            .running()
            .into_iter()
            .map(|n| (n, BTreeSet::new()))
            .collect();
        for l in self.spec.active_links() {
            let (ia, ib) = (self.index(&l.a).unwrap(), self.index(&l.b).unwrap());
            if self.slots[ia].running.is_some() && self.slots[ib].running.is_some() {
                m.get_mut(&l.a).unwrap().insert(self.slots[ib].id());
                m.get_mut(&l.b).unwrap().insert(self.slots[ia].id());
            }
        }
        m
    }

    /// Why the mesh is not quiet yet, or `None` when it is: every running
    /// broker reports fresh status, all expected links are up, all agree on
    /// root and epoch, and no role changed for 3 × HELLO.
    pub fn unsettled(&self) -> Option<String> {
        let now = unix_ms();
        let statuses = self.statuses();
        let expected = self.expected_links();
        let quiet_ms = 3 * self.hello_interval().as_millis() as u64;
        let mut roots = BTreeSet::new();
        let mut epochs = BTreeSet::new();
        for (name, want) in &expected {
            let Some(st) = statuses.get(name) else {
                return Some(format!("no status from {name}"));
            };
            if now.saturating_sub(st.updated_unix_ms) > 3000 {
                return Some(format!("stale status from {name}"));
            }
            let have: BTreeSet<BrokerId> = st.links.iter().map(|l| l.peer).collect();
            if &have != want {
                return Some(format!("{name} has links {have:?}, expected {want:?}"));
            }
            if st.links.iter().any(|l| l.rtt_us.is_none()) {
                return Some(format!("{name} has an unmeasured link"));
            }
            if now.saturating_sub(st.last_role_change_unix_ms) < quiet_ms {
                return Some(format!("{name} changed roles recently"));
            }
            roots.insert(st.root);
            epochs.insert(st.epoch);
        }
        if roots.len() > 1 {
            return Some(format!("root disagreement {roots:?}"));
        }
        if epochs.len() > 1 {
            return Some(format!("epoch disagreement {epochs:?}"));
        }
        None
    }

    /// Polls until [`Mesh::unsettled`] clears. Returns the wall-clock time
    /// of the last role change anywhere in the mesh.
    pub async fn wait_quiescent(&mut self, timeout: Duration) -> Result<u64, HarnessError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            self.fail_on_crash()?;
            match self.unsettled() {
                None => {
                    let last = self
                        .statuses()
                        .values()
                        .map(|s| s.last_role_change_unix_ms)
                        .max()
                        .unwrap_or(0);
                    return Ok(last);
                }
                Some(why) if tokio::time::Instant::now() >= deadline => {
                    return Err(HarnessError::NotQuiescent { waited: timeout, why })
                }
                Some(_) => tokio::time::sleep(Duration::from_millis(100)).await,
            }
        }
    }

    /// Oracle input for the running part of the mesh.
    pub fn tree_input(&mut self, label: &str, quiescent: bool) -> TreeInput {
        let statuses = self.statuses();
        for s in &mut self.slots {
            if let Some(st) = statuses.get(&s.name) {
                s.reported_capability = Some(st.capability);
            }
        }
        let brokers = self
            .slots
            .iter()
            .filter(|s| s.running.is_some())
            .map(|s| TreeBroker {
                name: s.name.clone(),
                id: s.id(),
                capability: match s.capability {
                    Some((l, r)) => compute_capability(l, r, self.spec.alpha, self.spec.beta).unwrap_or(0),
                    None => s.reported_capability.unwrap_or(0),
                },
            })
            .collect();
        let links = self
            .spec
            .active_links()
            .into_iter()
            .filter(|l| self.is_running(&l.a) && self.is_running(&l.b))
            .map(|l| TreeLink {
                a: l.a.clone(),
                b: l.b.clone(),
                rtt_us: (2.0 * l.delay_ms * 1000.0).round() as u64,
            })
            .collect();
        TreeInput {
            label: label.into(),
            brokers,
            links,
            statuses,
            quiescent,
        }
    }

    /// Waits for quiescence, then compares with the oracle.
    pub async fn settle_and_verify(&mut self, label: &str, timeout: Duration) -> Result<(TreeCheck, TreeInput), HarnessError> {
        let quiet = match self.wait_quiescent(timeout).await {
            Ok(_) => true,
            Err(HarnessError::NotQuiescent { why, .. }) => {
                tracing::warn!("{label}: not quiescent: {why}");
                false
            }
            Err(e) => return Err(e),
        };
        let input = self.tree_input(label, quiet);
        let check = verify_tree(&input);
        tracing::info!("{check}");
        Ok((check, input))
    }

    /// Client endpoints for `groups`. Clients at a site without a running
    /// broker reach the central broker through a proxy carrying the
    /// site-to-site delay.
    pub async fn targets(&mut self, groups: &[ClientGroup]) -> Result<Vec<Target>, HarnessError> {
        let central = match &self.spec.scenario {
            Scenario::Centralized(b) => Some(self.index(b)?),
            _ => None,
        };
        let mut out = Vec::new();
        for g in groups {
            let site = self.index(&g.site)?;
            let addr = if self.slots[site].running.is_some() {
                self.addr(&g.site)?
            } else if let Some(c) = central.filter(|&c| self.slots[c].running.is_some()) {
                let delay_ms = self.spec.site_delays(site)[c].ok_or_else(|| {
                    HarnessError::Unreachable(format!("site {} cannot reach {}", g.site, self.slots[c].name))
                })?;
                let upstream = self.addr(&self.slots[c].name.clone())?;
                let p = DelayProxy::start(upstream, Duration::from_secs_f64(delay_ms / 1000.0)).await?;
                let a = p.local_addr();
                self.client_proxies.push(p);
                a
            } else {
                return Err(HarnessError::NotRunning(g.site.clone()));
            };
            out.push(Target {
                addr,
                publishers: g.publishers,
                subscribers: g.subscribers,
            });
        }
        Ok(out)
    }

    pub async fn shutdown(mut self) {
        for s in &mut self.slots {
            match s.running.take() {
                Some(Running::Child(mut c)) => {
                    let _ = c.kill().await;
                }
                Some(Running::Local(h)) => h.shutdown().await,
                None => {}
            }
        }
        self.client_proxies.clear();
    }
}
