//! Observable broker state: JSON status snapshot and JSON-lines event log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::codec::Packet;
use crate::tree::Role;
use crate::BrokerId;

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Bytes written on bridge sockets since the last drain, by packet kind.
#[derive(Debug, Default)]
pub struct Traffic {
    bpdu_bytes: AtomicU64,
    bpdu_packets: AtomicU64,
    publish_bytes: AtomicU64,
    publish_packets: AtomicU64,
    other_bytes: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficSample {
    pub bpdu_bytes: u64,
    pub bpdu_packets: u64,
    pub publish_bytes: u64,
    pub publish_packets: u64,
    pub other_bytes: u64,
}

impl TrafficSample {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }

    pub fn add(&mut self, o: &TrafficSample) {
        self.bpdu_bytes += o.bpdu_bytes;
        self.bpdu_packets += o.bpdu_packets;
        self.publish_bytes += o.publish_bytes;
        self.publish_packets += o.publish_packets;
        self.other_bytes += o.other_bytes;
    }
}

impl Traffic {
    pub fn record(&self, p: &Packet, bytes: usize) {
        let bytes = bytes as u64;
        match p {
            Packet::Pingreq(Some(_)) => {
                self.bpdu_bytes.fetch_add(bytes, Ordering::Relaxed);
                self.bpdu_packets.fetch_add(1, Ordering::Relaxed);
            }
            Packet::Publish(_) => {
                self.publish_bytes.fetch_add(bytes, Ordering::Relaxed);
                self.publish_packets.fetch_add(1, Ordering::Relaxed);
            }
            _ => {
                self.other_bytes.fetch_add(bytes, Ordering::Relaxed);
            }
        }
    }

    pub fn drain(&self) -> TrafficSample {
        TrafficSample {
            bpdu_bytes: self.bpdu_bytes.swap(0, Ordering::Relaxed),
            bpdu_packets: self.bpdu_packets.swap(0, Ordering::Relaxed),
            publish_bytes: self.publish_bytes.swap(0, Ordering::Relaxed),
            publish_packets: self.publish_packets.swap(0, Ordering::Relaxed),
            other_bytes: self.other_bytes.swap(0, Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub client_publishes: u64,
    pub local_deliveries: u64,
    /// Inter-broker PUBLISH transmissions originated by this broker.
    pub publish_forwarded: u64,
    pub bridge_publishes_received: u64,
    /// Bridge publications dropped because they arrived on a non-tree link.
    pub bridge_publishes_discarded: u64,
    pub bpdu_sent: u64,
    pub tc_bpdu_sent: u64,
    pub bpdu_received: u64,
    pub wills_published: u64,
    pub link_ups: u64,
    pub link_downs: u64,
    pub traffic: TrafficSample,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStatus {
    pub peer: BrokerId,
    pub role: Role,
    pub forwarding: bool,
    pub rtt_us: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerStatus {
    pub id: BrokerId,
    pub pid: u32,
    pub capability: u64,
    pub root: BrokerId,
    pub root_capability: u64,
    pub root_path_cost_us: u32,
    pub epoch: u16,
    pub links: Vec<LinkStatus>,
    pub clients: usize,
    /// Last change of root, a role, or a link's forwarding state.
    pub last_role_change_unix_ms: u64,
    pub updated_unix_ms: u64,
    pub counters: Counters,
}

impl BrokerStatus {
    pub fn is_root(&self) -> bool {
        self.root == self.id
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    /// Atomic replace through a temporary sibling file.
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        std::fs::write(&tmp, serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?)?;
        std::fs::rename(&tmp, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEvent {
    Start {
        id: BrokerId,
        capability: u64,
    },
    LinkUp {
        peer: BrokerId,
    },
    LinkDown {
        peer: BrokerId,
        reason: String,
    },
    Roles {
        root: BrokerId,
        epoch: u16,
        root_path_cost_us: u32,
        links: Vec<LinkStatus>,
    },
    TcSent {
        peer: BrokerId,
        epoch: u16,
    },
    Traffic(TrafficSample),
    Will {
        topic: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub t_ms: u64,
    pub broker: BrokerId,
    #[serde(flatten)]
    pub event: LogEvent,
}

pub(crate) struct EventLog {
    broker: BrokerId,
    out: Option<BufWriter<File>>,
}

impl EventLog {
    pub fn open(broker: BrokerId, path: Option<&Path>) -> std::io::Result<Self> {
        let out = match path {
            Some(p) => Some(BufWriter::new(
                std::fs::OpenOptions::new().create(true).append(true).open(p)?,
            )),
            None => None,
        };
        Ok(Self { broker, out })
    }

    pub fn log(&mut self, event: LogEvent) {
        let Some(out) = &mut self.out else { return };
        let line = LogLine {
            t_ms: unix_ms(),
            broker: self.broker,
            event,
        };
        if let Ok(s) = serde_json::to_string(&line) {
            let _ = writeln!(out, "{s}");
        }
    }

    pub fn flush(&mut self) {
        if let Some(out) = &mut self.out {
            let _ = out.flush();
        }
    }
}

pub fn read_log(path: &Path) -> std::io::Result<Vec<LogLine>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_packet, BpduPayload, ProtocolVersion, Publish, QoS};

    #[test]
    fn traffic_classifies_by_packet() {
        let t = Traffic::default();
        let id: BrokerId = "127.0.0.1:1883".parse().unwrap();
        let ping = Packet::Pingreq(Some(BpduPayload {
            root_id: id,
            root_capability: 1,
            sender_id: id,
            sender_capability: 1,
            root_path_cost_us: 0,
            topology_change: false,
            root_link: false,
            epoch: 0,
        }));
        let len = encode_packet(&ping, ProtocolVersion::V5).unwrap().len();
        t.record(&ping, len);
        t.record(&Packet::Publish(Publish::new("a", "b", QoS::AtMostOnce)), 6);
        t.record(&Packet::Pingresp, 2);
        let s = t.drain();
        assert_eq!((s.bpdu_bytes, s.bpdu_packets), (38, 1));
        assert_eq!((s.publish_bytes, s.other_bytes), (6, 2));
        assert!(t.drain().is_zero());
    }

    #[test]
    fn log_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.log");
        let id: BrokerId = "127.0.0.1:1883".parse().unwrap();
        let mut log = EventLog::open(id, Some(&path)).unwrap();
        log.log(LogEvent::LinkUp { peer: id });
        log.log(LogEvent::Traffic(TrafficSample {
            bpdu_bytes: 38,
            ..Default::default()
        }));
        log.flush();
        let lines = read_log(&path).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].event, LogEvent::LinkUp { peer: id });
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.contains("\"kind\":\"traffic\""));
    }
}
