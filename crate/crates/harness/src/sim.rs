//! In-process mesh of tree engines connected by FIFO message queues.
//!
//! No sockets and no wall clock: BPDUs are delivered one at a time in an
//! order picked by a seeded RNG (per-link order is preserved, like TCP), until
//! no messages remain.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanmq_core::tree::{Action, LinkId, Role, Timestamp, TreeState, TreeTimers};
use spanmq_core::BpduPayload;

use crate::oracle::{oracle_tree, Edge, Graph};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("broker {node}: {message}")]
    Invariant { node: usize, message: String },
    #[error("no quiescence after {0} deliveries")]
    NoQuiescence(usize),
    #[error("edge {edge} forwards on one side only")]
    HalfForwarding { edge: Edge },
    #[error("tree engine rejected an event at broker {node}: {message}")]
    Engine { node: usize, message: String },
}

pub struct Simulator {
    graph: Graph,
    timers: TreeTimers,
    states: Vec<Option<TreeState>>,
    link_up: Vec<bool>,
    /// (edge index, towards the higher-indexed endpoint) → in-flight BPDUs
    queues: BTreeMap<(usize, bool), VecDeque<BpduPayload>>,
    rng: ChaCha8Rng,
    now: Timestamp,
    pub delivered: usize,
    pub role_changes: usize,
}

impl Simulator {
    /// Boots every broker and brings up every link in a random order.
    pub fn new(graph: Graph, seed: u64) -> Result<Self, SimError> {
        let timers = TreeTimers::default();
        let now = Timestamp::from_millis(1);
        let states = graph
            .nodes
            .iter()
            .map(|n| Some(TreeState::new(n.id, n.capability, timers, now)))
            .collect();
        let mut sim = Self {
            link_up: vec![false; graph.edges.len()],
            graph,
            timers,
            states,
            queues: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            now,
            delivered: 0,
            role_changes: 0,
        };
        let mut order: Vec<usize> = (0..sim.graph.edges.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, sim.rng.gen_range(0..=i));
        }
        for e in order {
            sim.link_up(e)?;
        }
        Ok(sim)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn state(&self, node: usize) -> Option<&TreeState> {
        self.states[node].as_ref()
    }

    pub fn is_alive(&self, node: usize) -> bool {
        self.states[node].is_some()
    }

    /// Link handles are edge indices on both ends.
    fn link_id(edge: usize) -> LinkId {
        LinkId(edge as u64)
    }

    fn endpoints(&self, edge: usize) -> (usize, usize) {
        let (a, b, _) = self.graph.edges[edge];
        (a, b)
    }

    fn link_up(&mut self, edge: usize) -> Result<(), SimError> {
        let (a, b, rtt) = self.graph.edges[edge];
        if self.states[a].is_none() || self.states[b].is_none() {
            return Ok(());
        }
        self.link_up[edge] = true;
        let rtt = rtt.min(u32::MAX as u64) as u32;
        for (me, peer) in [(a, b), (b, a)] {
            let peer_id = self.graph.nodes[peer].id;
            let now = self.now;
            let st = self.states[me].as_mut().expect("alive");
            let actions = st
                .add_connection(Self::link_id(edge), peer_id, now)
                .map_err(|e| engine(me, e))?;
            self.apply(me, actions)?;
        }
        for me in [a, b] {
            let now = self.now;
            let st = self.states[me].as_mut().expect("alive");
            let actions = st
                .on_rtt_sample(Self::link_id(edge), rtt, now)
                .map_err(|e| engine(me, e))?;
            self.apply(me, actions)?;
        }
        Ok(())
    }

    fn apply(&mut self, node: usize, actions: Vec<Action>) -> Result<(), SimError> {
        for a in actions {
            match a {
                Action::SendBpdu(link, bpdu) => {
                    let edge = link.0 as usize;
                    if !self.link_up[edge] {
                        continue;
                    }
                    let (a, b) = self.endpoints(edge);
                    let towards_b = node == a;
                    debug_assert!(node == a || node == b);
                    self.queues
                        .entry((edge, towards_b))
                        .or_default()
                        .push_back(bpdu);
                }
                Action::SetForwarding(..) => self.role_changes += 1,
                Action::ScheduleTick(_) => {}
            }
        }
        self.check_invariants(node)
    }

    /// Single Root role, and a Root role exactly when another broker is root.
    pub fn check_invariants(&self, node: usize) -> Result<(), SimError> {
        let Some(st) = &self.states[node] else {
            return Ok(());
        };
        let roots = st
            .connections()
            .values()
            .filter(|c| c.role == Role::Root)
            .count();
        let fail = |message: String| Err(SimError::Invariant { node, message });
        if roots > 1 {
            return fail(format!("{roots} Root connections"));
        }
        if st.is_root() {
            if roots != 0 || st.root_path_cost_us() != 0 {
                return fail("self-root with a Root connection or nonzero cost".into());
            }
        } else if roots != 1 {
            return fail(format!("root is {} but no Root connection", st.believed_root()));
        }
        Ok(())
    }

    /// Delivers one queued BPDU, chosen at random among non-empty links.
    /// Returns false when nothing is in flight.
    pub fn step(&mut self) -> Result<bool, SimError> {
        let ready: Vec<(usize, bool)> = self
            .queues
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(k, _)| *k)
            .collect();
        if ready.is_empty() {
            return Ok(false);
        }
        let key = ready[self.rng.gen_range(0..ready.len())];
        let bpdu = self
            .queues
            .get_mut(&key)
            .and_then(VecDeque::pop_front)
            .expect("non-empty");
        let (edge, towards_b) = key;
        let (a, b) = self.endpoints(edge);
        let dst = if towards_b { b } else { a };
        self.now = self.now + Duration::from_micros(10);
        self.delivered += 1;
        let now = self.now;
        let Some(st) = self.states[dst].as_mut() else {
            return Ok(true);
        };
        let actions = st
            .on_bpdu(Self::link_id(edge), bpdu, now)
            .map_err(|e| engine(dst, e))?;
        self.apply(dst, actions)?;
        Ok(true)
    }

    pub fn run_to_quiescence(&mut self, max_deliveries: usize) -> Result<usize, SimError> {
        let start = self.delivered;
        while self.step()? {
            if self.delivered - start > max_deliveries {
                return Err(SimError::NoQuiescence(max_deliveries));
            }
        }
        Ok(self.delivered - start)
    }

    /// Ungraceful failure: neighbours see their link drop, in random order.
    pub fn kill(&mut self, node: usize) -> Result<(), SimError> {
        self.states[node] = None;
        let mut edges: Vec<usize> = (0..self.graph.edges.len())
            .filter(|&e| self.link_up[e])
            .filter(|&e| {
                let (a, b) = self.endpoints(e);
                a == node || b == node
            })
            .collect();
        for i in (1..edges.len()).rev() {
            edges.swap(i, self.rng.gen_range(0..=i));
        }
        for e in edges {
            self.link_up[e] = false;
            self.queues.remove(&(e, true));
            self.queues.remove(&(e, false));
            let (a, b) = self.endpoints(e);
            let other = if a == node { b } else { a };
            self.now = self.now + Duration::from_micros(10);
            let now = self.now;
            if let Some(st) = self.states[other].as_mut() {
                let actions = st.on_link_down(Self::link_id(e), now);
                self.apply(other, actions)?;
            }
        }
        Ok(())
    }

    /// Restarts a killed broker with fresh state and reconnects its links.
    pub fn restore(&mut self, node: usize) -> Result<(), SimError> {
        let n = &self.graph.nodes[node];
        self.states[node] = Some(TreeState::new(n.id, n.capability, self.timers, self.now));
        let edges: Vec<usize> = (0..self.graph.edges.len())
            .filter(|&e| {
                let (a, b) = self.endpoints(e);
                a == node || b == node
            })
            .collect();
        for e in edges {
            self.link_up(e)?;
        }
        Ok(())
    }

    /// Edges forwarding data on both ends. An edge forwarding on only one
    /// end is an error.
    pub fn forwarding_edges(&self) -> Result<BTreeSet<Edge>, SimError> {
        let mut out = BTreeSet::new();
        for (e, &(a, b, _)) in self.graph.edges.iter().enumerate() {
            if !self.link_up[e] {
                continue;
            }
            let fa = self.states[a]
                .as_ref()
                .is_some_and(|s| s.is_forwarding(Self::link_id(e)));
            let fb = self.states[b]
                .as_ref()
                .is_some_and(|s| s.is_forwarding(Self::link_id(e)));
            match (fa, fb) {
                (true, true) => {
                    out.insert(Edge::new(a, b));
                }
                (false, false) => {}
                _ => return Err(SimError::HalfForwarding { edge: Edge::new(a, b) }),
            }
        }
        Ok(out)
    }

    /// Compares the live brokers against the oracle for the surviving graph.
    pub fn verify_against_oracle(&self) -> Result<(), String> {
        let dead: Vec<usize> = (0..self.states.len())
            .filter(|&v| self.states[v].is_none())
            .collect();
        let (g, kept) = self.graph.without(&dead);
        if !g.is_connected() {
            return Err("surviving graph is disconnected".into());
        }
        let oracle = oracle_tree(&g);
        let expected_root = g.nodes[oracle.root].id;
        for (nv, &v) in kept.iter().enumerate() {
            let st = self.states[v].as_ref().expect("alive");
            if st.believed_root() != expected_root {
                return Err(format!(
                    "broker {v} believes root {}, oracle root {expected_root}",
                    st.believed_root()
                ));
            }
            let want = oracle.dist[nv].expect("connected");
            if st.root_path_cost_us() as u64 != want {
                return Err(format!(
                    "broker {v} path cost {} µs, oracle {want} µs",
                    st.root_path_cost_us()
                ));
            }
        }
        let expected: BTreeSet<Edge> = oracle
            .edges()
            .into_iter()
            .map(|Edge(a, b)| Edge::new(kept[a], kept[b]))
            .collect();
        let actual = self.forwarding_edges().map_err(|e| e.to_string())?;
        if actual != expected {
            let extra: Vec<String> = actual.difference(&expected).map(Edge::to_string).collect();
            let missing: Vec<String> = expected.difference(&actual).map(Edge::to_string).collect();
            return Err(format!(
                "forwarding edges differ: extra [{}], missing [{}]",
                extra.join(", "),
                missing.join(", ")
            ));
        }
        Ok(())
    }
}

fn engine(node: usize, e: impl std::fmt::Display) -> SimError {
    SimError::Engine {
        node,
        message: e.to_string(),
    }
}
