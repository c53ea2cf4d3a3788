//! Spanning-tree state machine for the broker mesh.
//!
//! The engine is pure: it consumes events (link up, RTT sample, BPDU, link
//! down, timer tick) stamped with a caller-supplied [`Timestamp`] and returns
//! the [`Action`]s the I/O layer must perform. Identical event sequences
//! yield identical states and action traces.
//!
//! Election and path selection:
//!
//! * root = the broker with the highest capability, lowest [`BrokerId`] on ties;
//! * each non-root broker picks as root link the neighbour minimising
//!   `advertised cost + measured RTT`, then highest neighbour capability,
//!   then lowest neighbour id;
//! * the root marks all its links Designated; elsewhere a non-root link is
//!   Designated when this broker's `(root, cost, capability, id)` vector beats
//!   the neighbour's, otherwise Blocked.
//!
//! Data flows only across agreed tree edges: the root link, and Designated
//! links whose neighbour reports (via the BPDU root-link flag) that the link
//! is its own root link.
//!
//! Topology changes are scoped by a 16-bit epoch. Losing a link that carried
//! current information bumps the epoch and restarts election from scratch;
//! a BPDU with a newer epoch forces the same reset on the receiver, and BPDUs
//! from older epochs are stale and dropped.

use std::cmp::{Ordering, Reverse};
use std::collections::BTreeMap;
use std::ops::{Add, Sub};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::codec::BpduPayload;
use crate::BrokerId;

/// Microseconds on the engine's monotonic clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_micros(us: u64) -> Self {
        Self(us)
    }

    pub fn from_millis(ms: u64) -> Self {
        Self(ms * 1_000)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, d: Duration) -> Timestamp {
        Timestamp(self.0.saturating_add(d.as_micros() as u64))
    }
}

impl Sub for Timestamp {
    type Output = Duration;

    fn sub(self, rhs: Timestamp) -> Duration {
        Duration::from_micros(self.0.saturating_sub(rhs.0))
    }
}

/// Opaque handle of one logical bridge as seen by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Root,
    Designated,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    SendBpdu(LinkId, BpduPayload),
    SetForwarding(LinkId, bool),
    ScheduleTick(Duration),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("no link {0:?}")]
    UnknownLink(LinkId),
    #[error("link {0:?} already registered")]
    DuplicateLink(LinkId),
    #[error("BPDU on {link:?} claims sender {claimed}, link peer is {expected}")]
    PeerMismatch {
        link: LinkId,
        claimed: BrokerId,
        expected: BrokerId,
    },
}

/// Timer constants derived from the MQTT Keep Alive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeTimers {
    /// BPDU cadence: Keep Alive / 2.
    pub hello_interval: Duration,
    /// Silence after which a link counts as failed: 1.5 × Keep Alive.
    pub keepalive_timeout: Duration,
    /// Period after a reset during which outgoing BPDUs carry the TC flag.
    pub tc_holdoff: Duration,
}

impl TreeTimers {
    pub fn from_keep_alive(keep_alive: Duration) -> Self {
        let hello_interval = keep_alive / 2;
        Self {
            hello_interval,
            keepalive_timeout: keep_alive * 3 / 2,
            tc_holdoff: hello_interval * 2,
        }
    }
}

impl Default for TreeTimers {
    fn default() -> Self {
        Self::from_keep_alive(Duration::from_secs(10))
    }
}

/// `a` is the better root candidate than `b`: higher capability, then lower id.
pub fn better_root(a: (u64, BrokerId), b: (u64, BrokerId)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Serial-number comparison on the 16-bit topology epoch.
pub fn epoch_newer(a: u16, b: u16) -> bool {
    let d = a.wrapping_sub(b);
    d != 0 && (d < 0x8000 || (d == 0x8000 && a > b))
}

/// New RTT estimate after one sample: 7/8 of the old value plus 1/8 of the
/// sample, rounded. The first sample initialises the estimate.
pub fn ewma_rtt(current: Option<u32>, sample_us: u32) -> u32 {
    match current {
        None => sample_us.max(1),
        Some(old) => {
            let v = (7 * old as u64 + sample_us as u64 + 4) / 8;
            v.clamp(1, u32::MAX as u64) as u32
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionEntry {
    pub peer: BrokerId,
    pub role: Role,
    /// Smoothed RTT; `None` until the first probe completes.
    pub rtt_us: Option<u32>,
    pub peer_capability: u64,
    /// Latest BPDU from the current epoch.
    pub last_bpdu: Option<BpduPayload>,
    pub last_heard: Timestamp,
    pub forwarding: bool,
    /// Forward before the first BPDU arrives. True for fresh links, cleared
    /// by a reset.
    optimistic: bool,
    last_sent: Option<BpduPayload>,
}

/// Role and forwarding state of every link, as consumed by the router.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSnapshot {
    pub links: BTreeMap<LinkId, LinkRoute>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRoute {
    pub peer: BrokerId,
    pub role: Role,
    pub forwarding: bool,
}

impl RoleSnapshot {
    pub fn role(&self, link: LinkId) -> Option<Role> {
        self.links.get(&link).map(|l| l.role)
    }

    pub fn forwarding_links(&self) -> impl Iterator<Item = LinkId> + '_ {
        self.links
            .iter()
            .filter(|(_, l)| l.forwarding)
            .map(|(id, _)| *id)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeState {
    self_id: BrokerId,
    self_capability: u64,
    timers: TreeTimers,
    believed_root: BrokerId,
    believed_root_capability: u64,
    root_path_cost_us: u32,
    root_link: Option<LinkId>,
    epoch: u16,
    connections: BTreeMap<LinkId, ConnectionEntry>,
    tc_holdoff_until: Timestamp,
    next_hello: Timestamp,
}

impl TreeState {
    /// A fresh broker believes itself root.
    pub fn new(self_id: BrokerId, self_capability: u64, timers: TreeTimers, now: Timestamp) -> Self {
        Self {
            self_id,
            self_capability,
            timers,
            believed_root: self_id,
            believed_root_capability: self_capability,
            root_path_cost_us: 0,
            root_link: None,
            epoch: 0,
            connections: BTreeMap::new(),
            tc_holdoff_until: Timestamp::ZERO,
            next_hello: now + timers.hello_interval,
        }
    }

    pub fn self_id(&self) -> BrokerId {
        self.self_id
    }

    pub fn self_capability(&self) -> u64 {
        self.self_capability
    }

    pub fn timers(&self) -> TreeTimers {
        self.timers
    }

    pub fn believed_root(&self) -> BrokerId {
        self.believed_root
    }

    pub fn believed_root_capability(&self) -> u64 {
        self.believed_root_capability
    }

    pub fn is_root(&self) -> bool {
        self.believed_root == self.self_id
    }

    pub fn root_path_cost_us(&self) -> u32 {
        self.root_path_cost_us
    }

    pub fn root_link(&self) -> Option<LinkId> {
        self.root_link
    }

    pub fn epoch(&self) -> u16 {
        self.epoch
    }

    pub fn connections(&self) -> &BTreeMap<LinkId, ConnectionEntry> {
        &self.connections
    }

    pub fn connection(&self, link: LinkId) -> Option<&ConnectionEntry> {
        self.connections.get(&link)
    }

    pub fn role(&self, link: LinkId) -> Option<Role> {
        self.connections.get(&link).map(|e| e.role)
    }

    pub fn is_forwarding(&self, link: LinkId) -> bool {
        self.connections.get(&link).is_some_and(|e| e.forwarding)
    }

    pub fn in_topology_change(&self, now: Timestamp) -> bool {
        now < self.tc_holdoff_until
    }

    pub fn snapshot(&self) -> RoleSnapshot {
        RoleSnapshot {
            links: self
                .connections
                .iter()
                .map(|(id, e)| {
                    (
                        *id,
                        LinkRoute {
                            peer: e.peer,
                            role: e.role,
                            forwarding: e.forwarding,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Registers a bridge that completed its handshake. The link starts
    /// Designated and forwarding until classified, and is sent a BPDU at once.
    pub fn add_connection(
        &mut self,
        link: LinkId,
        peer: BrokerId,
        now: Timestamp,
    ) -> Result<Vec<Action>, TreeError> {
        if self.connections.contains_key(&link) {
            return Err(TreeError::DuplicateLink(link));
        }
        self.connections.insert(
            link,
            ConnectionEntry {
                peer,
                role: Role::Designated,
                rtt_us: None,
                peer_capability: 0,
                last_bpdu: None,
                last_heard: now,
                forwarding: true,
                optimistic: true,
                last_sent: None,
            },
        );
        let mut actions = vec![Action::SetForwarding(link, true)];
        actions.extend(self.recompute(now));
        Ok(actions)
    }

    /// Marks the link as alive without changing tree information.
    pub fn touch(&mut self, link: LinkId, now: Timestamp) {
        if let Some(e) = self.connections.get_mut(&link) {
            e.last_heard = e.last_heard.max(now);
        }
    }

    /// Folds one PINGREQ→PINGRESP sample into the link's smoothed RTT.
    pub fn on_rtt_sample(
        &mut self,
        link: LinkId,
        sample_us: u32,
        now: Timestamp,
    ) -> Result<Vec<Action>, TreeError> {
        let e = self
            .connections
            .get_mut(&link)
            .ok_or(TreeError::UnknownLink(link))?;
        e.last_heard = e.last_heard.max(now);
        let updated = ewma_rtt(e.rtt_us, sample_us);
        if e.rtt_us == Some(updated) {
            return Ok(Vec::new());
        }
        e.rtt_us = Some(updated);
        if e.last_bpdu.is_none() {
            return Ok(Vec::new());
        }
        Ok(self.recompute(now))
    }

    pub fn on_bpdu(
        &mut self,
        link: LinkId,
        bpdu: BpduPayload,
        now: Timestamp,
    ) -> Result<Vec<Action>, TreeError> {
        let e = self
            .connections
            .get_mut(&link)
            .ok_or(TreeError::UnknownLink(link))?;
        if bpdu.sender_id != e.peer {
            return Err(TreeError::PeerMismatch {
                link,
                claimed: bpdu.sender_id,
                expected: e.peer,
            });
        }
        e.last_heard = e.last_heard.max(now);
        if bpdu.epoch != self.epoch && !epoch_newer(bpdu.epoch, self.epoch) {
            // stale: help the sender catch up
            let payload = self.advertised(link, now);
            if let Some(e) = self.connections.get_mut(&link) {
                e.last_sent = Some(payload);
            }
            return Ok(vec![Action::SendBpdu(link, payload)]);
        }
        if epoch_newer(bpdu.epoch, self.epoch) {
            self.epoch = bpdu.epoch;
            self.reset(now);
        }
        let e = self.connections.get_mut(&link).expect("checked above");
        e.peer_capability = bpdu.sender_capability;
        e.last_bpdu = Some(bpdu);
        Ok(self.recompute(now))
    }

    /// Removes a failed link. If the link carried current tree information
    /// the whole tree is rebuilt: new epoch, self as root, TC-flagged BPDUs
    /// on every remaining link.
    pub fn on_link_down(&mut self, link: LinkId, now: Timestamp) -> Vec<Action> {
        let Some(removed) = self.connections.remove(&link) else {
            return Vec::new();
        };
        let mut actions = Vec::new();
        if removed.forwarding {
            actions.push(Action::SetForwarding(link, false));
        }
        if removed.last_bpdu.is_some() {
            self.epoch = self.epoch.wrapping_add(1);
            self.reset(now);
        } else if self.root_link == Some(link) {
            self.root_link = None;
        }
        actions.extend(self.recompute(now));
        actions
    }

    /// Periodic driver: expires silent links, emits the hello BPDUs and asks
    /// to be called again at the next deadline.
    pub fn tick(&mut self, now: Timestamp) -> Vec<Action> {
        let timeout = self.timers.keepalive_timeout;
        let expired: Vec<LinkId> = self
            .connections
            .iter()
            .filter(|(_, e)| now - e.last_heard > timeout)
            .map(|(id, _)| *id)
            .collect();
        let mut actions = Vec::new();
        for link in expired {
            actions.extend(self.on_link_down(link, now));
        }
        if now >= self.next_hello {
            let links: Vec<LinkId> = self.connections.keys().copied().collect();
            for link in links {
                let payload = self.advertised(link, now);
                if let Some(e) = self.connections.get_mut(&link) {
                    e.last_sent = Some(payload);
                }
                actions.push(Action::SendBpdu(link, payload));
            }
            self.next_hello = now + self.timers.hello_interval;
        }
        let next_expiry = self
            .connections
            .values()
            .map(|e| e.last_heard + timeout + Duration::from_micros(1))
            .min();
        let deadline = next_expiry.map_or(self.next_hello, |x| x.min(self.next_hello));
        actions.push(Action::ScheduleTick(deadline - now));
        actions
    }

    fn reset(&mut self, now: Timestamp) {
        self.believed_root = self.self_id;
        self.believed_root_capability = self.self_capability;
        self.root_path_cost_us = 0;
        self.root_link = None;
        for e in self.connections.values_mut() {
            e.last_bpdu = None;
            e.optimistic = false;
        }
        self.tc_holdoff_until = now + self.timers.tc_holdoff;
    }

    /// BPDU this broker currently advertises on `link`.
    fn advertised(&self, link: LinkId, now: Timestamp) -> BpduPayload {
        BpduPayload {
            root_id: self.believed_root,
            root_capability: self.believed_root_capability,
            sender_id: self.self_id,
            sender_capability: self.self_capability,
            root_path_cost_us: self.root_path_cost_us,
            topology_change: self.in_topology_change(now),
            root_link: self.root_link == Some(link),
            epoch: self.epoch,
        }
    }

    /// Re-derives root, root link, roles and forwarding from stored BPDUs and
    /// emits the resulting actions.
    fn recompute(&mut self, now: Timestamp) -> Vec<Action> {
        let mut best = (self.self_capability, self.self_id);
        for e in self.connections.values() {
            if let (Some(b), Some(_)) = (&e.last_bpdu, e.rtt_us) {
                let offered = (b.root_capability, b.root_id);
                if better_root(offered, best) {
                    best = offered;
                }
            }
        }

        let mut root_link = None;
        let mut cost = 0u32;
        if best.1 != self.self_id {
            root_link = self
                .connections
                .iter()
                .filter_map(|(id, e)| {
                    let b = e.last_bpdu.as_ref()?;
                    let rtt = e.rtt_us?;
                    (b.root_id == best.1 && b.root_capability == best.0).then(|| {
                        let via = b.root_path_cost_us as u64 + rtt as u64;
                        ((via, Reverse(b.sender_capability), b.sender_id, *id), *id)
                    })
                })
                .min_by(|a, b| a.0.cmp(&b.0))
                .map(|(key, id)| {
                    cost = key.0.min(u32::MAX as u64) as u32;
                    id
                });
        }
        self.believed_root_capability = best.0;
        self.believed_root = best.1;
        self.root_path_cost_us = cost;
        self.root_link = root_link;

        let mine = (best.0, best.1, cost, self.self_capability, self.self_id);
        let mut actions = Vec::new();
        for (id, e) in self.connections.iter_mut() {
            e.role = if Some(*id) == root_link {
                Role::Root
            } else {
                match &e.last_bpdu {
                    None => Role::Designated,
                    Some(b) => {
                        let theirs = (
                            b.root_capability,
                            b.root_id,
                            b.root_path_cost_us,
                            b.sender_capability,
                            b.sender_id,
                        );
                        if vector_cmp(mine, theirs) == Ordering::Less {
                            Role::Designated
                        } else {
                            Role::Blocked
                        }
                    }
                }
            };
            let forwarding = match e.role {
                Role::Root => true,
                Role::Blocked => false,
                Role::Designated => e.last_bpdu.map_or(e.optimistic, |b| b.root_link),
            };
            if forwarding != e.forwarding {
                e.forwarding = forwarding;
                actions.push(Action::SetForwarding(*id, forwarding));
            }
        }

        let links: Vec<LinkId> = self.connections.keys().copied().collect();
        for link in links {
            let payload = self.advertised(link, now);
            let e = self.connections.get_mut(&link).expect("iterating own keys");
            let changed = e
                .last_sent
                .is_none_or(|sent| !same_information(&sent, &payload));
            if changed {
                e.last_sent = Some(payload);
                actions.push(Action::SendBpdu(link, payload));
            }
        }
        actions
    }
}

/// Priority vector order: smaller is better.
fn vector_cmp(
    a: (u64, BrokerId, u32, u64, BrokerId),
    b: (u64, BrokerId, u32, u64, BrokerId),
) -> Ordering {
    b.0.cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
        .then(b.3.cmp(&a.3))
        .then(a.4.cmp(&b.4))
}

/// Equal apart from the topology-change flag, which only decays with time.
fn same_information(a: &BpduPayload, b: &BpduPayload) -> bool {
    BpduPayload {
        topology_change: false,
        ..*a
    } == BpduPayload {
        topology_change: false,
        ..*b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(last: u8) -> BrokerId {
        BrokerId::new([10, 0, 0, last].into(), 1883)
    }

    fn t(ms: u64) -> Timestamp {
        Timestamp::from_millis(ms)
    }

    fn sends(actions: &[Action]) -> Vec<(LinkId, BpduPayload)> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::SendBpdu(l, b) => Some((*l, *b)),
                _ => None,
            })
            .collect()
    }

    fn bpdu_from(sender: BrokerId, cap: u64, root: BrokerId, root_cap: u64, cost: u32) -> BpduPayload {
        BpduPayload {
            root_id: root,
            root_capability: root_cap,
            sender_id: sender,
            sender_capability: cap,
            root_path_cost_us: cost,
            topology_change: false,
            root_link: false,
            epoch: 0,
        }
    }

    #[test]
    fn better_root_prefers_capability_then_lower_id() {
        assert!(better_root((10, id(2)), (5, id(1))));
        assert!(!better_root((5, id(1)), (10, id(2))));
        assert!(better_root((10, id(1)), (10, id(2))));
        let low_port = BrokerId::new([10, 0, 0, 1].into(), 1883);
        let high_port = BrokerId::new([10, 0, 0, 1].into(), 1884);
        assert!(better_root((10, low_port), (10, high_port)));
        assert!(!better_root((10, id(1)), (10, id(1))));
    }

    #[test]
    fn better_root_is_a_strict_total_order() {
        let ids = [
            BrokerId::new([10, 0, 0, 1].into(), 1883),
            BrokerId::new([10, 0, 0, 1].into(), 1884),
            BrokerId::new([10, 0, 0, 2].into(), 1),
            BrokerId::new([9, 0, 0, 200].into(), 65535),
        ];
        let caps = [0u64, 5, 10];
        let items: Vec<_> = caps
            .iter()
            .flat_map(|c| ids.iter().map(move |i| (*c, *i)))
            .collect();
        for &a in &items {
            assert!(!better_root(a, a), "irreflexive");
            for &b in &items {
                if a != b {
                    assert!(better_root(a, b) ^ better_root(b, a), "total and asymmetric");
                }
                for &c in &items {
                    if better_root(a, b) && better_root(b, c) {
                        assert!(better_root(a, c), "transitive");
                    }
                }
            }
        }
    }

    #[test]
    fn epoch_comparison_wraps() {
        assert!(epoch_newer(1, 0));
        assert!(!epoch_newer(0, 1));
        assert!(epoch_newer(0, u16::MAX));
        assert!(!epoch_newer(5, 5));
        assert!(epoch_newer(0x8000, 0) ^ epoch_newer(0, 0x8000));
    }

    #[test]
    fn ewma_step_response_matches_arithmetic() {
        // after k samples of a step from 0 to S, the estimate is S(1-(7/8)^k)
        let mut rtt = Some(ewma_rtt(None, 1000));
        for _ in 0..8 {
            rtt = Some(ewma_rtt(rtt, 21_000));
        }
        let reached = (rtt.unwrap() - 1000) as f64 / 20_000.0;
        let oracle = 1.0 - (7.0f64 / 8.0).powi(8);
        assert!((reached - oracle).abs() < 1e-3, "{reached} vs {oracle}");
        assert!(reached > 0.63);
        assert_eq!(ewma_rtt(None, 0), 1);
    }

    #[test]
    fn lone_broker_is_its_own_root() {
        let s = TreeState::new(id(1), 7, TreeTimers::default(), t(0));
        assert_eq!(s.believed_root(), id(1));
        assert_eq!(s.root_path_cost_us(), 0);
        assert!(s.root_link().is_none());
    }

    #[test]
    fn adopts_better_root_and_marks_root_link() {
        let mut s = TreeState::new(id(2), 20, TreeTimers::default(), t(0));
        let a = LinkId(1);
        let actions = s.add_connection(a, id(1), t(0)).unwrap();
        assert!(actions.contains(&Action::SetForwarding(a, true)));
        assert_eq!(sends(&actions).len(), 1);
        s.on_rtt_sample(a, 500, t(1)).unwrap();
        let actions = s
            .on_bpdu(a, bpdu_from(id(1), 30, id(1), 30, 0), t(2))
            .unwrap();
        assert_eq!(s.believed_root(), id(1));
        assert_eq!(s.root_path_cost_us(), 500);
        assert_eq!(s.role(a), Some(Role::Root));
        let sent = sends(&actions);
        assert_eq!(sent.len(), 1);
        assert!(sent[0].1.root_link);
        assert_eq!(sent[0].1.root_path_cost_us, 500);
    }

    #[test]
    fn ignores_equal_or_worse_root() {
        let mut s = TreeState::new(id(1), 30, TreeTimers::default(), t(0));
        let l = LinkId(1);
        s.add_connection(l, id(2), t(0)).unwrap();
        s.on_rtt_sample(l, 100, t(0)).unwrap();
        s.on_bpdu(l, bpdu_from(id(2), 20, id(2), 20, 0), t(1)).unwrap();
        assert!(s.is_root());
        assert_eq!(s.role(l), Some(Role::Designated));
        // root's link forwards only once the child attaches
        assert!(!s.is_forwarding(l));
        let mut attached = bpdu_from(id(2), 20, id(1), 30, 100);
        attached.root_link = true;
        let actions = s.on_bpdu(l, attached, t(2)).unwrap();
        assert!(actions.contains(&Action::SetForwarding(l, true)));
        assert!(s.is_forwarding(l));
        // re-sending identical information emits nothing
        assert!(s.on_bpdu(l, attached, t(3)).unwrap().is_empty());
    }

    #[test]
    fn bpdu_on_unknown_link_is_an_error() {
        let mut s = TreeState::new(id(1), 30, TreeTimers::default(), t(0));
        let err = s
            .on_bpdu(LinkId(9), bpdu_from(id(2), 1, id(2), 1, 0), t(0))
            .unwrap_err();
        assert_eq!(err, TreeError::UnknownLink(LinkId(9)));
    }

    #[test]
    fn bpdu_with_wrong_sender_is_rejected() {
        let mut s = TreeState::new(id(1), 30, TreeTimers::default(), t(0));
        s.add_connection(LinkId(1), id(2), t(0)).unwrap();
        assert!(matches!(
            s.on_bpdu(LinkId(1), bpdu_from(id(3), 1, id(3), 1, 0), t(0)),
            Err(TreeError::PeerMismatch { .. })
        ));
    }

    #[test]
    fn losing_root_link_of_a_pair_leaves_survivor_as_root() {
        let mut s = TreeState::new(id(2), 20, TreeTimers::default(), t(0));
        let l = LinkId(1);
        s.add_connection(l, id(1), t(0)).unwrap();
        s.on_rtt_sample(l, 100, t(0)).unwrap();
        s.on_bpdu(l, bpdu_from(id(1), 30, id(1), 30, 0), t(1)).unwrap();
        assert_eq!(s.root_link(), Some(l));
        let actions = s.on_link_down(l, t(2));
        assert!(actions.contains(&Action::SetForwarding(l, false)));
        assert!(s.is_root());
        assert_eq!(s.root_path_cost_us(), 0);
        assert!(s.connections().is_empty());
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn link_down_floods_topology_change() {
        let mut s = TreeState::new(id(2), 20, TreeTimers::default(), t(0));
        for (l, p) in [(1, 1), (2, 3), (3, 4)] {
            s.add_connection(LinkId(l), id(p), t(0)).unwrap();
            s.on_rtt_sample(LinkId(l), 100, t(0)).unwrap();
        }
        s.on_bpdu(LinkId(1), bpdu_from(id(1), 30, id(1), 30, 0), t(1)).unwrap();
        s.on_bpdu(LinkId(2), bpdu_from(id(3), 10, id(1), 30, 100), t(1)).unwrap();
        s.on_bpdu(LinkId(3), bpdu_from(id(4), 10, id(1), 30, 100), t(1)).unwrap();
        let actions = s.on_link_down(LinkId(1), t(5));
        let sent = sends(&actions);
        assert_eq!(sent.len(), 2);
        for (_, b) in &sent {
            assert!(b.topology_change);
            assert_eq!(b.root_id, id(2));
            assert_eq!(b.root_path_cost_us, 0);
            assert_eq!(b.epoch, 1);
        }
        // information learned before the reset no longer counts
        assert!(s.is_root());
        assert!(!s.is_forwarding(LinkId(2)));
        assert!(!s.is_forwarding(LinkId(3)));
    }

    #[test]
    fn newer_epoch_resets_and_stale_epoch_is_answered() {
        let mut s = TreeState::new(id(3), 10, TreeTimers::default(), t(0));
        let (a, b) = (LinkId(1), LinkId(2));
        s.add_connection(a, id(1), t(0)).unwrap();
        s.add_connection(b, id(2), t(0)).unwrap();
        s.on_rtt_sample(a, 100, t(0)).unwrap();
        s.on_rtt_sample(b, 100, t(0)).unwrap();
        s.on_bpdu(a, bpdu_from(id(1), 30, id(1), 30, 0), t(1)).unwrap();
        assert_eq!(s.believed_root(), id(1));

        // neighbour 2 lost the root and restarted election at epoch 1
        let mut tc = bpdu_from(id(2), 20, id(2), 20, 0);
        tc.epoch = 1;
        tc.topology_change = true;
        s.on_bpdu(b, tc, t(2)).unwrap();
        assert_eq!(s.epoch(), 1);
        assert_eq!(s.believed_root(), id(2));
        assert_eq!(s.root_link(), Some(b));

        // a pre-failure BPDU still in flight from 1 is stale
        let actions = s
            .on_bpdu(a, bpdu_from(id(1), 30, id(1), 30, 0), t(3))
            .unwrap();
        assert_eq!(s.believed_root(), id(2));
        let sent = sends(&actions);
        assert_eq!(sent.len(), 1);
        assert_eq!(sent[0].0, a);
        assert_eq!(sent[0].1.epoch, 1);
    }

    #[test]
    fn tick_sends_hello_on_every_link_and_expires_silent_ones() {
        let timers = TreeTimers::from_keep_alive(Duration::from_secs(10));
        assert_eq!(timers.hello_interval, Duration::from_secs(5));
        assert_eq!(timers.keepalive_timeout, Duration::from_secs(15));
        assert_eq!(timers.tc_holdoff, Duration::from_secs(10));
        let mut s = TreeState::new(id(1), 30, timers, t(0));
        s.add_connection(LinkId(1), id(2), t(0)).unwrap();
        s.add_connection(LinkId(2), id(3), t(0)).unwrap();

        let early = s.tick(t(1_000));
        assert!(sends(&early).is_empty());
        assert_eq!(
            early.last(),
            Some(&Action::ScheduleTick(Duration::from_secs(4)))
        );

        s.touch(LinkId(1), t(5_000));
        s.touch(LinkId(2), t(5_000));
        let hello = s.tick(t(5_000));
        assert_eq!(sends(&hello).len(), 2);

        s.touch(LinkId(1), t(14_000));
        let mut twin = s.clone();
        let expired = s.tick(t(20_001));
        assert!(s.connection(LinkId(2)).is_none());
        assert!(s.connection(LinkId(1)).is_some());
        // same transition as an explicit link-down at that instant
        let mut expected = twin.on_link_down(LinkId(2), t(20_001));
        let tail = twin.tick(t(20_001));
        expected.extend(tail);
        assert_eq!(expired, expected);
    }

    #[test]
    fn rtt_change_alone_reroutes() {
        // 3 reaches root 1 either directly or through 2
        let mut s = TreeState::new(id(3), 10, TreeTimers::default(), t(0));
        let (direct, via2) = (LinkId(1), LinkId(2));
        s.add_connection(direct, id(1), t(0)).unwrap();
        s.add_connection(via2, id(2), t(0)).unwrap();
        s.on_rtt_sample(direct, 1_000, t(0)).unwrap();
        s.on_rtt_sample(via2, 300, t(0)).unwrap();
        s.on_bpdu(direct, bpdu_from(id(1), 30, id(1), 30, 0), t(1)).unwrap();
        s.on_bpdu(via2, bpdu_from(id(2), 20, id(1), 30, 400), t(1)).unwrap();
        assert_eq!(s.root_link(), Some(via2));
        assert_eq!(s.root_path_cost_us(), 700);
        assert_eq!(s.role(direct), Some(Role::Blocked));
        for _ in 0..40 {
            s.on_rtt_sample(via2, 5_000, t(2)).unwrap();
        }
        assert_eq!(s.root_link(), Some(direct));
        // 2 still advertises the cheaper path, so this side of the edge blocks
        assert_eq!(s.role(via2), Some(Role::Blocked));
    }

    #[test]
    fn equal_cost_tie_prefers_higher_capability_neighbour() {
        let mut s = TreeState::new(id(4), 1, TreeTimers::default(), t(0));
        for (l, p) in [(1, 2), (2, 3)] {
            s.add_connection(LinkId(l), id(p), t(0)).unwrap();
            s.on_rtt_sample(LinkId(l), 100, t(0)).unwrap();
        }
        s.on_bpdu(LinkId(1), bpdu_from(id(2), 5, id(1), 30, 100), t(1)).unwrap();
        s.on_bpdu(LinkId(2), bpdu_from(id(3), 9, id(1), 30, 100), t(1)).unwrap();
        assert_eq!(s.root_link(), Some(LinkId(2)));
    }
}
