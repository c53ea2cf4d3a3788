//! Plain-text experiment description.
//!
//! ```text
//! # three brokers, one with more CPU
//! name triangle
//! keep_alive 10
//! broker a cpu=4000 ram=1000
//! broker b cpu=2000 ram=1000
//! broker c cpu=2000 ram=1000
//! link a b 35
//! link b c 35
//! link a c 75
//! scenario distributed          # benchmark | distributed | locality <pct> | centralized <broker>
//! publishers 10
//! subscribers 100
//! message_size 64
//! topics 10
//! duration 5
//! rate 50                       # per publisher, messages per second; default unpaced
//! place subscribers c 100       # optional explicit placement by site
//! event 10 kill a               # seconds after the first workload starts
//! event 40 restore a
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use spanmq_core::QoS;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerSpec {
    pub name: String,
    /// (CPU MHz, RAM MB) override; the broker measures itself otherwise.
    pub capability: Option<(u64, u64)>,
    /// 0 picks a free port at launch.
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    /// Injected one-way delay in milliseconds.
    pub delay_ms: f64,
}

impl LinkSpec {
    pub fn delay(&self) -> Duration {
        Duration::from_secs_f64(self.delay_ms / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// One standard broker with every client.
    Benchmark,
    /// Clients split evenly over all brokers.
    Distributed,
    /// Every publisher on the first broker, with this percentage of the
    /// subscribers next to them and the rest spread over the other brokers.
    Locality(u8),
    /// Only the named broker runs; clients reach it from their sites
    /// through the link delays.
    Centralized(String),
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Benchmark => write!(f, "benchmark"),
            Scenario::Distributed => write!(f, "distributed"),
            Scenario::Locality(p) => write!(f, "locality{p}"),
            Scenario::Centralized(b) => write!(f, "centralized-{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadShape {
    pub publishers: usize,
    pub subscribers: usize,
    pub message_size: usize,
    pub topics: usize,
    pub qos: u8,
    pub duration_s: f64,
    /// Per-publisher cap.
    pub messages: Option<u64>,
    /// Per-publisher messages per second.
    #[serde(default)]
    pub rate: Option<f64>,
}

impl Default for WorkloadShape {
    fn default() -> Self {
        Self {
            publishers: 1,
            subscribers: 1,
            message_size: 64,
            topics: 10,
            qos: 2,
            duration_s: 10.0,
            messages: None,
            rate: None,
        }
    }
}

impl WorkloadShape {
    pub fn qos(&self) -> QoS {
        QoS::from_u8(self.qos).unwrap_or(QoS::ExactlyOnce)
    }

    pub fn duration(&self) -> Duration {
        Duration::from_secs_f64(self.duration_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClientRole {
    Publishers,
    Subscribers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub role: ClientRole,
    pub site: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Kill(String),
    Restore(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub at_s: f64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub name: String,
    pub keep_alive: u16,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub brokers: Vec<BrokerSpec>,
    pub links: Vec<LinkSpec>,
    pub scenario: Scenario,
    pub workload: WorkloadShape,
    pub placements: Vec<Placement>,
    pub events: Vec<TimedEvent>,
}

/// Clients attached at one site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientGroup {
    pub site: String,
    pub publishers: usize,
    pub subscribers: usize,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self {
            name: "run".into(),
            keep_alive: 10,
            alpha: 1.0,
            beta: 1.0,
            seed: 1,
            brokers: Vec::new(),
            links: Vec::new(),
            scenario: Scenario::Distributed,
            workload: WorkloadShape::default(),
            placements: Vec::new(),
            events: Vec::new(),
        }
    }
}

impl FromStr for TopologySpec {
    type Err = SpecError;

    fn from_str(text: &str) -> Result<Self, SpecError> {
        let mut spec = TopologySpec::default();
        let mut set_counts = (false, false);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            let err = |msg: String| SpecError::Syntax { line, msg };
            let num = |w: Option<&&str>, what: &str| -> Result<f64, SpecError> {
                w.and_then(|w| w.parse::<f64>().ok())
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| err(format!("{what} needs a non-negative number")))
            };
            let int = |w: Option<&&str>, what: &str| -> Result<u64, SpecError> {
                w.and_then(|w| w.parse::<u64>().ok())
                    .ok_or_else(|| err(format!("{what} needs a non-negative integer")))
            };
            let arity = |n: usize| -> Result<(), SpecError> {
                if words.len() == n {
                    Ok(())
                } else {
                    Err(err(format!("{} takes {} argument(s)", words[0], n - 1)))
                }
            };
            match words[0] {
                "name" => {
                    arity(2)?;
                    spec.name = words[1].to_owned();
                }
                "keep_alive" => {
                    arity(2)?;
                    spec.keep_alive = u16::try_from(int(words.get(1), "keep_alive")?)
                        .ok()
                        .filter(|&k| k > 0)
                        .ok_or_else(|| err("keep_alive must be 1..=65535".into()))?;
                }
                "alpha" => {
                    arity(2)?;
                    spec.alpha = num(words.get(1), "alpha")?;
                }
                "beta" => {
                    arity(2)?;
                    spec.beta = num(words.get(1), "beta")?;
                }
                "seed" => {
                    arity(2)?;
                    spec.seed = int(words.get(1), "seed")?;
                }
                "broker" => {
                    let name = words.get(1).ok_or_else(|| err("broker needs a name".into()))?;
                    let mut b = BrokerSpec {
                        name: (*name).to_owned(),
                        capability: None,
                        port: 0,
                    };
                    let (mut cpu, mut ram) = (None, None);
                    for kv in &words[2..] {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| err(format!("expected key=value, got {kv:?}")))?;
                        let v: u64 = v.parse().map_err(|_| err(format!("bad number in {kv:?}")))?;
                        match k {
                            "cpu" => cpu = Some(v),
                            "ram" => ram = Some(v),
                            "port" => {
                                b.port = u16::try_from(v).map_err(|_| err(format!("bad port {v}")))?
                            }
                            _ => return Err(err(format!("unknown broker attribute {k:?}"))),
                        }
                    }
                    b.capability = match (cpu, ram) {
                        (Some(l), Some(r)) => Some((l, r)),
                        (None, None) => None,
                        _ => return Err(err("cpu and ram must be given together".into())),
                    };
                    spec.brokers.push(b);
                }
                "link" => {
                    arity(4)?;
                    spec.links.push(LinkSpec {
                        a: words[1].to_owned(),
                        b: words[2].to_owned(),
                        delay_ms: num(words.get(3), "link delay")?,
                    });
                }
                "scenario" => {
                    spec.scenario = match (words.get(1).copied(), words.len()) {
                        (Some("benchmark"), 2) => Scenario::Benchmark,
                        (Some("distributed"), 2) => Scenario::Distributed,
                        (Some("locality"), 3) => {
                            let p = int(words.get(2), "locality")?;
                            if p > 100 {
                                return Err(err("locality is a percentage".into()));
                            }
                            Scenario::Locality(p as u8)
                        }
                        (Some("centralized"), 3) => Scenario::Centralized(words[2].to_owned()),
                        _ => {
                            return Err(err(
                                "scenario is benchmark, distributed, locality <pct> or centralized <broker>"
                                    .into(),
                            ))
                        }
                    };
                }
                "publishers" => {
                    arity(2)?;
                    spec.workload.publishers = int(words.get(1), "publishers")? as usize;
                    set_counts.0 = true;
                }
                "subscribers" => {
                    arity(2)?;
                    spec.workload.subscribers = int(words.get(1), "subscribers")? as usize;
                    set_counts.1 = true;
                }
                "message_size" => {
                    arity(2)?;
                    spec.workload.message_size = int(words.get(1), "message_size")? as usize;
                }
                "topics" => {
                    arity(2)?;
                    spec.workload.topics = int(words.get(1), "topics")? as usize;
                }
                "qos" => {
                    arity(2)?;
                    let q = int(words.get(1), "qos")?;
                    if q > 2 {
                        return Err(err("qos is 0, 1 or 2".into()));
                    }
                    spec.workload.qos = q as u8;
                }
                "duration" => {
                    arity(2)?;
                    spec.workload.duration_s = num(words.get(1), "duration")?;
                }
                "messages" => {
                    arity(2)?;
                    spec.workload.messages = Some(int(words.get(1), "messages")?);
                }
                "rate" => {
                    arity(2)?;
                    let r = num(words.get(1), "rate")?;
                    if r <= 0.0 {
                        return Err(err("rate must be positive".into()));
                    }
                    spec.workload.rate = Some(r);
                }
                "place" => {
                    arity(4)?;
                    let role = match words[1] {
                        "publishers" => ClientRole::Publishers,
                        "subscribers" => ClientRole::Subscribers,
                        other => return Err(err(format!("cannot place {other:?}"))),
                    };
                    spec.placements.push(Placement {
                        role,
                        site: words[2].to_owned(),
                        count: int(words.get(3), "place")? as usize,
                    });
                }
                "event" => {
                    arity(4)?;
                    let at_s = num(words.get(1), "event time")?;
                    let action = match words[2] {
                        "kill" => Action::Kill(words[3].to_owned()),
                        "restore" => Action::Restore(words[3].to_owned()),
                        other => return Err(err(format!("unknown event {other:?}"))),
                    };
                    spec.events.push(TimedEvent { at_s, action });
                }
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }
        for (role, explicit) in [
            (ClientRole::Publishers, set_counts.0),
            (ClientRole::Subscribers, set_counts.1),
        ] {
            if !spec.placements.iter().any(|p| p.role == role) {
                continue;
            }
            let sum: usize = spec.placements.iter().filter(|p| p.role == role).map(|p| p.count).sum();
            let field = match role {
                ClientRole::Publishers => &mut spec.workload.publishers,
                ClientRole::Subscribers => &mut spec.workload.subscribers,
            };
            if explicit && *field != sum {
                return Err(SpecError::Invalid(format!(
                    "{role:?} placed {sum} but declared {}",
                    *field
                )));
            }
            *field = sum;
        }
        spec.events
            .sort_by(|a, b| a.at_s.partial_cmp(&b.at_s).unwrap_or(std::cmp::Ordering::Equal));
        spec.validate()?;
        Ok(spec)
    }
}

impl TopologySpec {
    pub fn load(path: &std::path::Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpecError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: String| Err(SpecError::Invalid(m));
        if self.brokers.is_empty() {
            return bad("no brokers declared".into());
        }
        let mut names = BTreeSet::new();
        for b in &self.brokers {
            if !names.insert(b.name.as_str()) {
                return bad(format!("broker {} declared twice", b.name));
            }
        }
        let mut pairs = BTreeSet::new();
        for l in &self.links {
            for end in [&l.a, &l.b] {
                if !names.contains(end.as_str()) {
                    return bad(format!("link {}-{} names unknown broker {end}", l.a, l.b));
                }
            }
            if l.a == l.b {
                return bad(format!("link {}-{} is a loop", l.a, l.b));
            }
            let key = if l.a < l.b { (&l.a, &l.b) } else { (&l.b, &l.a) };
            if !pairs.insert(key) {
                return bad(format!("link {}-{} declared twice", l.a, l.b));
            }
        }
        match &self.scenario {
            Scenario::Benchmark if self.brokers.len() != 1 => {
                return bad(format!("benchmark needs exactly 1 broker, found {}", self.brokers.len()))
            }
            Scenario::Centralized(b) if !names.contains(b.as_str()) => {
                return bad(format!("centralized broker {b} is not declared"))
            }
            _ => {}
        }
        for p in &self.placements {
            if !names.contains(p.site.as_str()) {
                return bad(format!("placement site {} is not a broker", p.site));
            }
        }
        for e in &self.events {
            let (Action::Kill(b) | Action::Restore(b)) = &e.action;
            if !names.contains(b.as_str()) {
                return bad(format!("event names unknown broker {b}"));
            }
        }
        if self.workload.topics == 0 {
            return bad("topics must be positive".into());
        }
        if self.workload.publishers == 0 {
            return bad("workload needs at least one publisher".into());
        }
        if !matches!(self.scenario, Scenario::Centralized(_)) && !self.is_connected() {
            return bad("link graph is not connected".into());
        }
        Ok(())
    }

    pub fn broker_index(&self, name: &str) -> Option<usize> {
        self.brokers.iter().position(|b| b.name == name)
    }

    /// Brokers that run in this scenario.
    pub fn running(&self) -> Vec<usize> {
        match &self.scenario {
            Scenario::Centralized(b) => vec![self.broker_index(b).unwrap()],
            _ => (0..self.brokers.len()).collect(),
        }
    }

    /// Links between running brokers.
    pub fn active_links(&self) -> Vec<&LinkSpec> {
        match &self.scenario {
            Scenario::Centralized(_) => Vec::new(),
            _ => self.links.iter().collect(),
        }
    }

    fn is_connected(&self) -> bool {
        let d = self.site_delays(0);
        d.iter().all(Option::is_some)
    }

    /// One-way delay in ms along the cheapest link path from broker `from`
    /// to every broker.
    pub fn site_delays(&self, from: usize) -> Vec<Option<f64>> {
        let n = self.brokers.len();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for l in &self.links {
            let (a, b) = (self.broker_index(&l.a).unwrap(), self.broker_index(&l.b).unwrap());
            adj[a].push((b, l.delay_ms));
            adj[b].push((a, l.delay_ms));
        }
        let mut dist = vec![None; n];
        let mut done = vec![false; n];
        dist[from] = Some(0.0);
        while let Some((d, v)) = (0..n)
            .filter(|&v| !done[v])
            .filter_map(|v| dist[v].map(|d: f64| (d, v)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
        {
            done[v] = true;
            for &(u, w) in &adj[v] {
                if dist[u].is_none_or(|du| d + w < du) {
                    dist[u] = Some(d + w);
                }
            }
        }
        dist
    }

    /// Publisher and subscriber counts per site, explicit placements first,
    /// the scenario's rule for any role left unplaced.
    pub fn client_groups(&self) -> Vec<ClientGroup> {
        let k = self.brokers.len();
        let mut pubs = vec![0usize; k];
        let mut subs = vec![0usize; k];
        let w = &self.workload;
        let running = self.running();
        let even = |n: usize, over: &[usize], into: &mut [usize]| {
            for (i, &b) in over.iter().enumerate() {
                into[b] += n / over.len() + usize::from(i < n % over.len());
            }
        };
        for (role, total, into) in [
            (ClientRole::Publishers, w.publishers, &mut pubs),
            (ClientRole::Subscribers, w.subscribers, &mut subs),
        ] {
            let explicit: Vec<&Placement> = self.placements.iter().filter(|p| p.role == role).collect();
            if !explicit.is_empty() {
                for p in explicit {
                    into[self.broker_index(&p.site).unwrap()] += p.count;
                }
                continue;
            }
            match &self.scenario {
                Scenario::Benchmark | Scenario::Distributed | Scenario::Centralized(_) => {
                    even(total, &running, into)
                }
                Scenario::Locality(pct) => match role {
                    ClientRole::Publishers => into[0] += total,
                    ClientRole::Subscribers => {
                        let local = (total * usize::from(*pct) + 50) / 100;
                        into[0] += local;
                        if k == 1 {
                            into[0] += total - local;
                        } else {
                            let others: Vec<usize> = (1..k).collect();
                            even(total - local, &others, into);
                        }
                    }
                },
            }
        }
        (0..k)
            .filter(|&i| pubs[i] + subs[i] > 0)
            .map(|i| ClientGroup {
                site: self.brokers[i].name.clone(),
                publishers: pubs[i],
                subscribers: subs[i],
            })
            .collect()
    }

    /// Broker name → spec for every declared broker.
    pub fn by_name(&self) -> BTreeMap<&str, &BrokerSpec> {
        self.brokers.iter().map(|b| (b.name.as_str(), b)).collect()
    }
}
