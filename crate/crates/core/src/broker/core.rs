//! The broker's single owner of sessions, subscriptions, retained messages
//! and the tree engine. Socket tasks talk to it only through [`Event`]s.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{mpsc, oneshot, watch};
use tokio::time::Instant;

use super::status::{unix_ms, BrokerStatus, Counters, EventLog, LinkStatus, LogEvent, Traffic};
use super::{ConnId, Event, Outbox, RouteSummary};
use crate::codec::{Ack, Connack, Packet, Publish, QoS, Suback, Will};
use crate::qos::{Inbound, InboundDecision, Outbound};
use crate::routing::{route_publication, Origin, SubscriptionTable};
use crate::tree::{Action, LinkId, Role, RoleSnapshot, Timestamp, TreeState};
use crate::BrokerId;

const STATUS_INTERVAL: Duration = Duration::from_millis(100);
const STATUS_HEARTBEAT: Duration = Duration::from_secs(1);
const TRAFFIC_INTERVAL: Duration = Duration::from_millis(250);
/// Probes taken on any PINGREQ until this many samples exist, then only on
/// the hello cadence.
const EAGER_SAMPLES: u32 = 3;

struct ClientState {
    client_id: String,
    keep_alive: Duration,
    will: Option<Will>,
    last_heard: Instant,
    inbound: Inbound,
    outbound: Outbound,
}

struct BridgeState {
    peer: BrokerId,
    initiated_by_self: bool,
    inbound: Inbound,
    outbound: Outbound,
    /// Send time of each unanswered PINGREQ that is an RTT probe.
    pings: VecDeque<Option<Instant>>,
    probe_outstanding: bool,
    samples: u32,
    last_probe: Option<Instant>,
}

enum Kind {
    Client(ClientState),
    Bridge(BridgeState),
}

struct Session {
    tx: Outbox,
    /// Dropping this stops the socket's reader task.
    _kill: oneshot::Sender<()>,
    kind: Kind,
}

pub(crate) struct CoreParams {
    pub id: BrokerId,
    pub capability: u64,
    pub tree: TreeState,
    pub status_file: Option<std::path::PathBuf>,
    pub log: EventLog,
    pub traffic: Arc<Traffic>,
    pub bridged: watch::Sender<BTreeSet<BrokerId>>,
}

pub(crate) struct Core {
    id: BrokerId,
    capability: u64,
    started: Instant,
    hello: Duration,
    tree: TreeState,
    roles: RoleSnapshot,
    tick_at: Instant,
    sessions: HashMap<ConnId, Session>,
    client_ids: HashMap<String, ConnId>,
    bridges: BTreeMap<BrokerId, ConnId>,
    subs: SubscriptionTable<ConnId>,
    retained: BTreeMap<String, Publish>,
    counters: Counters,
    traffic: Arc<Traffic>,
    log: EventLog,
    status_file: Option<std::path::PathBuf>,
    status_dirty: bool,
    status_written: Instant,
    last_role_change_ms: u64,
    last_root: BrokerId,
    bridged: watch::Sender<BTreeSet<BrokerId>>,
}

impl Core {
    pub fn new(p: CoreParams) -> Self {
        let now = Instant::now();
        let hello = p.tree.timers().hello_interval;
        let roles = p.tree.snapshot();
        let mut log = p.log;
        log.log(LogEvent::Start {
            id: p.id,
            capability: p.capability,
        });
        Self {
            id: p.id,
            capability: p.capability,
            started: now,
            hello,
            tree: p.tree,
            roles,
            tick_at: now + hello,
            sessions: HashMap::new(),
            client_ids: HashMap::new(),
            bridges: BTreeMap::new(),
            subs: SubscriptionTable::new(),
            retained: BTreeMap::new(),
            counters: Counters::default(),
            traffic: p.traffic,
            log,
            status_file: p.status_file,
            status_dirty: true,
            status_written: now,
            last_role_change_ms: unix_ms(),
            last_root: p.id,
            bridged: p.bridged,
        }
    }

    fn now_ts(&self) -> Timestamp {
        Timestamp::from_micros(self.started.elapsed().as_micros() as u64)
    }

    pub async fn run(mut self, mut events: mpsc::UnboundedReceiver<Event>) {
        let mut status_tick = tokio::time::interval(STATUS_INTERVAL);
        let mut traffic_tick = tokio::time::interval(TRAFFIC_INTERVAL);
        let mut client_tick = tokio::time::interval(Duration::from_secs(1));
        for t in [&mut status_tick, &mut traffic_tick, &mut client_tick] {
            t.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        }
        self.write_status();
        loop {
            tokio::select! {
                ev = events.recv() => match ev {
                    Some(Event::Shutdown) | None => break,
                    Some(ev) => self.handle(ev),
                },
                _ = tokio::time::sleep_until(self.tick_at) => self.tree_tick(),
                _ = status_tick.tick() => {
                    if self.status_dirty || self.status_written.elapsed() >= STATUS_HEARTBEAT {
                        self.write_status();
                    }
                }
                _ = traffic_tick.tick() => self.drain_traffic(),
                _ = client_tick.tick() => self.expire_clients(),
            }
        }
        self.drain_traffic();
        self.write_status();
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::ClientUp {
                conn,
                connect,
                addr,
                tx,
                kill,
            } => {
                let client_id = if connect.client_id.is_empty() {
                    format!("auto-{conn}")
                } else {
                    connect.client_id.clone()
                };
                if let Some(old) = self.client_ids.remove(&client_id) {
                    tracing::debug!("client {client_id} taken over from {addr}");
                    self.drop_session(old, false, "session taken over");
                }
                let _ = tx.send(Packet::Connack(Connack::accepted()));
                self.client_ids.insert(client_id.clone(), conn);
                self.sessions.insert(
                    conn,
                    Session {
                        tx,
                        _kill: kill,
                        kind: Kind::Client(ClientState {
                            client_id,
                            keep_alive: Duration::from_secs(connect.keep_alive.into()),
                            will: connect.will,
                            last_heard: Instant::now(),
                            inbound: Inbound::new(),
                            outbound: Outbound::new(),
                        }),
                    },
                );
                self.status_dirty = true;
            }
            Event::BridgeUp {
                conn,
                peer,
                initiated_by_self,
                tx,
                kill,
            } => self.bridge_up(conn, peer, initiated_by_self, tx, kill),
            Event::Packet { conn, packet } => self.on_packet(conn, packet),
            Event::Closed { conn, reason } => self.drop_session(conn, true, &reason),
            Event::Status(reply) => {
                let _ = reply.send(self.status());
            }
            Event::InjectBridgePublish {
                peer,
                publish,
                reply,
            } => {
                let summary = self.bridges.get(&peer).copied().map(|conn| {
                    let before = self.counters.clone();
                    self.route(Origin::Bridge(LinkId(conn)), publish);
                    RouteSummary {
                        deliveries: self.counters.local_deliveries - before.local_deliveries,
                        forwards: self.counters.publish_forwarded - before.publish_forwarded,
                    }
                });
                let _ = reply.send(summary);
            }
            Event::Shutdown => {}
        }
    }

    fn bridge_up(
        &mut self,
        conn: ConnId,
        peer: BrokerId,
        initiated_by_self: bool,
        tx: Outbox,
        kill: oneshot::Sender<()>,
    ) {
        if peer == self.id {
            tracing::warn!("refusing bridge to self");
            return;
        }
        if let Some(&old) = self.bridges.get(&peer) {
            let old_initiated = match self.sessions.get(&old).map(|s| &s.kind) {
                Some(Kind::Bridge(b)) => b.initiated_by_self,
                _ => false,
            };
            // keep the socket opened by the lower id; a repeat from the same
            // side replaces the old socket, which is likely stale
            let keeper_is_self = self.id < peer;
            if old_initiated != initiated_by_self && old_initiated == keeper_is_self {
                tracing::debug!("duplicate bridge to {peer} dropped");
                return;
            }
            self.drop_session(old, true, "replaced by newer bridge socket");
        }
        self.sessions.insert(
            conn,
            Session {
                tx,
                _kill: kill,
                kind: Kind::Bridge(BridgeState {
                    peer,
                    initiated_by_self,
                    inbound: Inbound::new(),
                    outbound: Outbound::new(),
                    pings: VecDeque::new(),
                    probe_outstanding: false,
                    samples: 0,
                    last_probe: None,
                }),
            },
        );
        self.bridges.insert(peer, conn);
        self.publish_bridged();
        self.counters.link_ups += 1;
        self.log.log(LogEvent::LinkUp { peer });
        let now = self.now_ts();
        match self.tree.add_connection(LinkId(conn), peer, now) {
            Ok(actions) => self.apply(actions),
            Err(e) => tracing::error!("tree rejected link to {peer}: {e}"),
        }
    }

    fn publish_bridged(&self) {
        let set: BTreeSet<BrokerId> = self.bridges.keys().copied().collect();
        self.bridged.send_replace(set);
    }

    /// Removes a session. Ungraceful client endings publish the will.
    fn drop_session(&mut self, conn: ConnId, ungraceful: bool, reason: &str) {
        let Some(session) = self.sessions.remove(&conn) else {
            return;
        };
        self.status_dirty = true;
        match session.kind {
            Kind::Client(c) => {
                if self.client_ids.get(&c.client_id) == Some(&conn) {
                    self.client_ids.remove(&c.client_id);
                }
                self.subs.remove_session(conn);
                if ungraceful {
                    if let Some(will) = c.will {
                        tracing::debug!("client {} gone ({reason}); publishing will", c.client_id);
                        self.counters.wills_published += 1;
                        self.log.log(LogEvent::Will {
                            topic: will.topic.clone(),
                        });
                        let publish = Publish {
                            dup: false,
                            qos: will.qos,
                            retain: will.retain,
                            topic: will.topic,
                            packet_id: None,
                            payload: will.payload,
                            properties: Default::default(),
                        };
                        self.route(Origin::Client(conn), publish);
                    }
                }
            }
            Kind::Bridge(b) => {
                if self.bridges.get(&b.peer) == Some(&conn) {
                    self.bridges.remove(&b.peer);
                    self.publish_bridged();
                }
                self.counters.link_downs += 1;
                self.log.log(LogEvent::LinkDown {
                    peer: b.peer,
                    reason: reason.to_owned(),
                });
                let now = self.now_ts();
                let actions = self.tree.on_link_down(LinkId(conn), now);
                self.apply(actions);
            }
        }
    }

    fn send(&self, conn: ConnId, packet: Packet) {
        if let Some(s) = self.sessions.get(&conn) {
            let _ = s.tx.send(packet);
        }
    }

    fn on_packet(&mut self, conn: ConnId, packet: Packet) {
        let is_bridge = match self.sessions.get_mut(&conn) {
            None => return,
            Some(Session {
                kind: Kind::Client(c),
                ..
            }) => {
                c.last_heard = Instant::now();
                false
            }
            Some(Session {
                kind: Kind::Bridge(_),
                ..
            }) => true,
        };
        let result = if is_bridge {
            let now = self.now_ts();
            self.tree.touch(LinkId(conn), now);
            self.on_bridge_packet(conn, packet)
        } else {
            self.on_client_packet(conn, packet)
        };
        if let Err(reason) = result {
            tracing::warn!("closing connection {conn}: {reason}");
            self.drop_session(conn, true, &reason);
        }
    }

    fn on_client_packet(&mut self, conn: ConnId, packet: Packet) -> Result<(), String> {
        match packet {
            Packet::Publish(p) => {
                self.counters.client_publishes += 1;
                self.inbound_publish(conn, Origin::Client(conn), p)
            }
            Packet::Pubrel(a) => self.inbound_pubrel(conn, a),
            Packet::Puback(a) => self.outbound_ack(conn, AckKind::Puback, a),
            Packet::Pubrec(a) => self.outbound_ack(conn, AckKind::Pubrec, a),
            Packet::Pubcomp(a) => self.outbound_ack(conn, AckKind::Pubcomp, a),
            Packet::Subscribe(s) => {
                let mut codes = Vec::with_capacity(s.filters.len());
                let mut granted = Vec::new();
                for f in &s.filters {
                    match self.subs.subscribe(conn, &f.filter, f.qos) {
                        Ok(()) => {
                            codes.push(f.qos as u8);
                            granted.push(f.filter.clone());
                        }
                        Err(e) => {
                            tracing::debug!("rejecting filter {:?}: {e}", f.filter);
                            codes.push(0x80);
                        }
                    }
                }
                self.send(
                    conn,
                    Packet::Suback(Suback {
                        packet_id: s.packet_id,
                        codes,
                        properties: Default::default(),
                    }),
                );
                self.send_retained(conn, &granted);
                self.status_dirty = true;
                Ok(())
            }
            Packet::Pingreq(_) => {
                self.send(conn, Packet::Pingresp);
                Ok(())
            }
            Packet::Disconnect(_) => {
                self.drop_session(conn, false, "client disconnected");
                Ok(())
            }
            other => Err(format!("unexpected {:?} from client", other.packet_type())),
        }
    }

    fn on_bridge_packet(&mut self, conn: ConnId, packet: Packet) -> Result<(), String> {
        match packet {
            Packet::Publish(p) => {
                self.counters.bridge_publishes_received += 1;
                self.inbound_publish(conn, Origin::Bridge(LinkId(conn)), p)
            }
            Packet::Pubrel(a) => self.inbound_pubrel(conn, a),
            Packet::Puback(a) => self.outbound_ack(conn, AckKind::Puback, a),
            Packet::Pubrec(a) => self.outbound_ack(conn, AckKind::Pubrec, a),
            Packet::Pubcomp(a) => self.outbound_ack(conn, AckKind::Pubcomp, a),
            Packet::Pingreq(bpdu) => {
                self.send(conn, Packet::Pingresp);
                if let Some(bpdu) = bpdu {
                    self.counters.bpdu_received += 1;
                    let now = self.now_ts();
                    match self.tree.on_bpdu(LinkId(conn), bpdu, now) {
                        Ok(actions) => self.apply(actions),
                        Err(e) => tracing::warn!("BPDU dropped: {e}"),
                    }
                }
                Ok(())
            }
            Packet::Pingresp => {
                let Some(Session {
                    kind: Kind::Bridge(b),
                    ..
                }) = self.sessions.get_mut(&conn)
                else {
                    return Ok(());
                };
                if let Some(Some(sent)) = b.pings.pop_front() {
                    b.probe_outstanding = false;
                    b.samples += 1;
                    let sample = sent.elapsed().as_micros().clamp(1, u32::MAX as u128) as u32;
                    let now = self.now_ts();
                    match self.tree.on_rtt_sample(LinkId(conn), sample, now) {
                        Ok(actions) => self.apply(actions),
                        Err(e) => tracing::warn!("RTT sample dropped: {e}"),
                    }
                    self.status_dirty = true;
                }
                Ok(())
            }
            Packet::Disconnect(_) => {
                self.drop_session(conn, true, "peer sent DISCONNECT");
                Ok(())
            }
            other => Err(format!("unexpected {:?} on bridge", other.packet_type())),
        }
    }

    fn inbound_publish(&mut self, conn: ConnId, origin: Origin<ConnId>, p: Publish) -> Result<(), String> {
        match (p.qos, p.packet_id) {
            (QoS::AtMostOnce, _) => self.route(origin, p),
            (QoS::AtLeastOnce, Some(id)) => {
                self.route(origin, p);
                self.send(conn, Packet::Puback(Ack::new(id)));
            }
            (QoS::ExactlyOnce, Some(id)) => {
                let decision = match self.sessions.get_mut(&conn).map(|s| &mut s.kind) {
                    Some(Kind::Client(c)) => c.inbound.on_publish(id),
                    Some(Kind::Bridge(b)) => b.inbound.on_publish(id),
                    None => return Ok(()),
                };
                if decision == InboundDecision::Deliver {
                    self.route(origin, p);
                }
                self.send(conn, Packet::Pubrec(Ack::new(id)));
            }
            _ => return Err("QoS > 0 PUBLISH without packet id".into()),
        }
        Ok(())
    }

    fn inbound_pubrel(&mut self, conn: ConnId, a: Ack) -> Result<(), String> {
        let r = match self.sessions.get_mut(&conn).map(|s| &mut s.kind) {
            Some(Kind::Client(c)) => c.inbound.on_pubrel(a.packet_id),
            Some(Kind::Bridge(b)) => b.inbound.on_pubrel(a.packet_id),
            None => return Ok(()),
        };
        r.map_err(|e| e.to_string())?;
        self.send(conn, Packet::Pubcomp(Ack::new(a.packet_id)));
        Ok(())
    }

    fn outbound_ack(&mut self, conn: ConnId, kind: AckKind, a: Ack) -> Result<(), String> {
        let outbound = match self.sessions.get_mut(&conn).map(|s| &mut s.kind) {
            Some(Kind::Client(c)) => &mut c.outbound,
            Some(Kind::Bridge(b)) => &mut b.outbound,
            None => return Ok(()),
        };
        let id = a.packet_id;
        let r = match kind {
            AckKind::Puback => outbound.on_puback(id),
            AckKind::Pubrec => outbound.on_pubrec(id),
            AckKind::Pubcomp => outbound.on_pubcomp(id),
        };
        r.map_err(|e| e.to_string())?;
        if kind == AckKind::Pubrec {
            self.send(conn, Packet::Pubrel(Ack::new(id)));
        }
        Ok(())
    }

    /// Routes one publication and performs the deliveries and forwards.
    fn route(&mut self, origin: Origin<ConnId>, p: Publish) {
        let route = route_publication(origin, &p.topic, p.qos, &self.roles, &self.subs);
        if let Origin::Bridge(link) = origin {
            let accepted = self
                .roles
                .links
                .get(&link)
                .is_some_and(|l| l.forwarding && l.role != Role::Blocked);
            if !accepted {
                self.counters.bridge_publishes_discarded += 1;
                return;
            }
        }
        if p.retain {
            if p.payload.is_empty() {
                self.retained.remove(&p.topic);
            } else {
                let mut stored = p.clone();
                stored.dup = false;
                stored.packet_id = None;
                self.retained.insert(p.topic.clone(), stored);
            }
        }
        for (conn, qos) in route.deliveries {
            let Some(Session {
                tx,
                kind: Kind::Client(c),
                ..
            }) = self.sessions.get_mut(&conn)
            else {
                continue;
            };
            let packet_id = match qos {
                QoS::AtMostOnce => None,
                q => match c.outbound.start(q) {
                    Ok(id) => Some(id),
                    Err(e) => {
                        tracing::warn!("dropping delivery to {}: {e}", c.client_id);
                        continue;
                    }
                },
            };
            let _ = tx.send(Packet::Publish(Publish {
                dup: false,
                qos,
                retain: false,
                topic: p.topic.clone(),
                packet_id,
                payload: p.payload.clone(),
                properties: Default::default(),
            }));
            self.counters.local_deliveries += 1;
        }
        for link in route.forwards {
            let Some(Session {
                tx,
                kind: Kind::Bridge(b),
                ..
            }) = self.sessions.get_mut(&(link.0 as ConnId))
            else {
                continue;
            };
            let packet_id = match b.outbound.start(QoS::ExactlyOnce) {
                Ok(id) => id,
                Err(e) => {
                    tracing::warn!("dropping forward to {}: {e}", b.peer);
                    continue;
                }
            };
            let _ = tx.send(Packet::Publish(Publish {
                dup: false,
                qos: QoS::ExactlyOnce,
                retain: p.retain,
                topic: p.topic.clone(),
                packet_id: Some(packet_id),
                payload: p.payload.clone(),
                properties: Default::default(),
            }));
            self.counters.publish_forwarded += 1;
        }
    }

    fn send_retained(&mut self, conn: ConnId, filters: &[String]) {
        let matching: Vec<Publish> = self
            .retained
            .values()
            .filter(|r| filters.iter().any(|f| crate::topic::matches(f, &r.topic)))
            .cloned()
            .collect();
        for r in matching {
            let qos = self
                .subs
                .match_subscribers(&r.topic)
                .into_iter()
                .find(|(c, _)| *c == conn)
                .map_or(QoS::AtMostOnce, |(_, q)| q.min(r.qos));
            let Some(Session {
                tx,
                kind: Kind::Client(c),
                ..
            }) = self.sessions.get_mut(&conn)
            else {
                return;
            };
            let packet_id = match qos {
                QoS::AtMostOnce => None,
                q => c.outbound.start(q).ok(),
            };
            let _ = tx.send(Packet::Publish(Publish {
                dup: false,
                qos: if packet_id.is_some() { qos } else { QoS::AtMostOnce },
                retain: true,
                packet_id,
                ..r
            }));
        }
    }

    fn tree_tick(&mut self) {
        let now = self.now_ts();
        let actions = self.tree.tick(now);
        // links the engine expired on keep-alive silence
        let expired: Vec<ConnId> = self
            .sessions
            .iter()
            .filter(|(conn, s)| {
                matches!(s.kind, Kind::Bridge(_)) && self.tree.connection(LinkId(**conn)).is_none()
            })
            .map(|(c, _)| *c)
            .collect();
        self.apply(actions);
        for conn in expired {
            self.drop_session(conn, true, "keep-alive timeout");
        }
        if self.tick_at <= Instant::now() {
            self.tick_at = Instant::now() + self.hello;
        }
    }

    fn apply(&mut self, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::SendBpdu(link, bpdu) => self.send_bpdu(link, bpdu),
                Action::SetForwarding(..) => {}
                Action::ScheduleTick(d) => self.tick_at = Instant::now() + d,
            }
        }
        let roles = self.tree.snapshot();
        if roles != self.roles || self.tree.believed_root() != self.last_root {
            self.roles = roles;
            self.role_change();
        }
    }

    fn role_change(&mut self) {
        self.last_role_change_ms = unix_ms();
        self.last_root = self.tree.believed_root();
        self.status_dirty = true;
        let links = self.link_statuses();
        self.log.log(LogEvent::Roles {
            root: self.tree.believed_root(),
            epoch: self.tree.epoch(),
            root_path_cost_us: self.tree.root_path_cost_us(),
            links,
        });
    }

    fn send_bpdu(&mut self, link: LinkId, bpdu: crate::codec::BpduPayload) {
        let conn = link.0 as ConnId;
        let hello = self.hello;
        let Some(Session {
            tx,
            kind: Kind::Bridge(b),
            ..
        }) = self.sessions.get_mut(&conn)
        else {
            return;
        };
        let now = Instant::now();
        let probe = !b.probe_outstanding
            && (b.samples < EAGER_SAMPLES
                || b.last_probe.is_none_or(|t| now - t >= hello * 9 / 10));
        if probe {
            b.probe_outstanding = true;
            b.last_probe = Some(now);
        }
        b.pings.push_back(probe.then_some(now));
        let _ = tx.send(Packet::Pingreq(Some(bpdu)));
        self.counters.bpdu_sent += 1;
        if bpdu.topology_change {
            self.counters.tc_bpdu_sent += 1;
            let peer = b.peer;
            self.log.log(LogEvent::TcSent {
                peer,
                epoch: bpdu.epoch,
            });
        }
    }

    fn expire_clients(&mut self) {
        let now = Instant::now();
        let expired: Vec<ConnId> = self
            .sessions
            .iter()
            .filter_map(|(conn, s)| match &s.kind {
                Kind::Client(c)
                    if !c.keep_alive.is_zero() && now - c.last_heard > c.keep_alive * 3 / 2 =>
                {
                    Some(*conn)
                }
                _ => None,
            })
            .collect();
        for conn in expired {
            self.drop_session(conn, true, "client keep-alive timeout");
        }
    }

    fn drain_traffic(&mut self) {
        let sample = self.traffic.drain();
        if !sample.is_zero() {
            self.counters.traffic.add(&sample);
            self.log.log(LogEvent::Traffic(sample));
            self.status_dirty = true;
        }
        self.log.flush();
    }

    fn link_statuses(&self) -> Vec<LinkStatus> {
        self.tree
            .connections()
            .values()
            .map(|e| LinkStatus {
                peer: e.peer,
                role: e.role,
                forwarding: e.forwarding,
                rtt_us: e.rtt_us,
            })
            .collect()
    }

    fn status(&self) -> BrokerStatus {
        BrokerStatus {
            id: self.id,
            pid: std::process::id(),
            capability: self.capability,
            root: self.tree.believed_root(),
            root_capability: self.tree.believed_root_capability(),
            root_path_cost_us: self.tree.root_path_cost_us(),
            epoch: self.tree.epoch(),
            links: self.link_statuses(),
            clients: self.client_ids.len(),
            last_role_change_unix_ms: self.last_role_change_ms,
            updated_unix_ms: unix_ms(),
            counters: self.counters.clone(),
        }
    }

    fn write_status(&mut self) {
        self.status_dirty = false;
        self.status_written = Instant::now();
        if let Some(path) = &self.status_file {
            if let Err(e) = self.status().write(path) {
                tracing::warn!("status file {}: {e}", path.display());
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AckKind {
    Puback,
    Pubrec,
    Pubcomp,
}
