use bytes::Bytes;

use super::BpduPayload;

/// Bit set on the CONNECT protocol version byte by a broker opening a bridge.
pub const BROKER_FLAG: u8 = 0x80;

pub fn set_broker_flag(version_byte: u8) -> u8 {
    version_byte | BROKER_FLAG
}

pub fn has_broker_flag(version_byte: u8) -> bool {
    version_byte & BROKER_FLAG != 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[repr(u8)]
pub enum QoS {
    #[default]
    AtMostOnce = 0,
    AtLeastOnce = 1,
    ExactlyOnce = 2,
}

impl QoS {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::AtMostOnce),
            1 => Some(Self::AtLeastOnce),
            2 => Some(Self::ExactlyOnce),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolVersion {
    /// MQTT 3.1.1, version byte 4.
    V311,
    /// MQTT 5.0, version byte 5.
    V5,
}

impl ProtocolVersion {
    pub fn byte(self) -> u8 {
        match self {
            Self::V311 => 4,
            Self::V5 => 5,
        }
    }

    /// Accepts a base version byte with the broker flag already masked off.
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            4 => Some(Self::V311),
            5 => Some(Self::V5),
            _ => None,
        }
    }
}

/// Raw MQTT 5 property block, kept opaque (without its length prefix).
/// Always empty on 3.1.1 connections.
pub type Properties = Bytes;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Will {
    pub topic: String,
    pub payload: Bytes,
    pub qos: QoS,
    pub retain: bool,
    pub properties: Properties,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connect {
    pub version: ProtocolVersion,
    /// MSB of the protocol version byte: the sender is a broker opening a bridge.
    pub broker: bool,
    pub clean_start: bool,
    pub keep_alive: u16,
    pub client_id: String,
    pub will: Option<Will>,
    pub username: Option<String>,
    pub password: Option<Bytes>,
    pub properties: Properties,
}

impl Connect {
    pub fn new(version: ProtocolVersion, client_id: impl Into<String>, keep_alive: u16) -> Self {
        Self {
            version,
            broker: false,
            clean_start: true,
            keep_alive,
            client_id: client_id.into(),
            will: None,
            username: None,
            password: None,
            properties: Properties::new(),
        }
    }

    pub fn protocol_version_byte(&self) -> u8 {
        let base = self.version.byte();
        if self.broker {
            set_broker_flag(base)
        } else {
            base
        }
    }

    pub fn is_broker_connect(&self) -> bool {
        has_broker_flag(self.protocol_version_byte())
    }
}

pub mod connack_code {
    pub const ACCEPTED: u8 = 0x00;
    pub const V311_UNACCEPTABLE_VERSION: u8 = 0x01;
    pub const V5_UNSPECIFIED: u8 = 0x80;
    pub const V5_UNSUPPORTED_VERSION: u8 = 0x84;
    pub const V5_SERVER_BUSY: u8 = 0x89;
    pub const V311_SERVER_UNAVAILABLE: u8 = 0x03;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connack {
    pub session_present: bool,
    pub code: u8,
    pub properties: Properties,
}

impl Connack {
    pub fn accepted() -> Self {
        Self {
            session_present: false,
            code: connack_code::ACCEPTED,
            properties: Properties::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publish {
    pub dup: bool,
    pub qos: QoS,
    pub retain: bool,
    pub topic: String,
    /// Present exactly when `qos` is above zero.
    pub packet_id: Option<u16>,
    pub payload: Bytes,
    pub properties: Properties,
}

impl Publish {
    pub fn new(topic: impl Into<String>, payload: impl Into<Bytes>, qos: QoS) -> Self {
        Self {
            dup: false,
            qos,
            retain: false,
            topic: topic.into(),
            packet_id: None,
            payload: payload.into(),
            properties: Properties::new(),
        }
    }
}

/// Body shared by PUBACK, PUBREC, PUBREL and PUBCOMP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ack {
    pub packet_id: u16,
    /// MQTT 5 reason code; always zero on 3.1.1.
    pub reason: u8,
    pub properties: Properties,
}

impl Ack {
    pub fn new(packet_id: u16) -> Self {
        Self {
            packet_id,
            reason: 0,
            properties: Properties::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscribeFilter {
    pub filter: String,
    pub qos: QoS,
    /// MQTT 5 subscription option bits 2..=5 (no-local, retain-as-published,
    /// retain handling), stored in place. Zero on 3.1.1.
    pub options: u8,
}

impl SubscribeFilter {
    pub fn new(filter: impl Into<String>, qos: QoS) -> Self {
        Self {
            filter: filter.into(),
            qos,
            options: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscribe {
    pub packet_id: u16,
    pub filters: Vec<SubscribeFilter>,
    pub properties: Properties,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suback {
    pub packet_id: u16,
    pub codes: Vec<u8>,
    pub properties: Properties,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Disconnect {
    pub reason: u8,
    pub properties: Properties,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect(Connect),
    Connack(Connack),
    Publish(Publish),
    Puback(Ack),
    Pubrec(Ack),
    Pubrel(Ack),
    Pubcomp(Ack),
    Subscribe(Subscribe),
    Suback(Suback),
    /// Keep-alive probe, optionally carrying a spanning-tree record.
    Pingreq(Option<BpduPayload>),
    Pingresp,
    Disconnect(Disconnect),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PacketType {
    Connect = 1,
    Connack = 2,
    Publish = 3,
    Puback = 4,
    Pubrec = 5,
    Pubrel = 6,
    Pubcomp = 7,
    Subscribe = 8,
    Suback = 9,
    Pingreq = 12,
    Pingresp = 13,
    Disconnect = 14,
}

impl PacketType {
    pub fn from_nibble(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Connect,
            2 => Self::Connack,
            3 => Self::Publish,
            4 => Self::Puback,
            5 => Self::Pubrec,
            6 => Self::Pubrel,
            7 => Self::Pubcomp,
            8 => Self::Subscribe,
            9 => Self::Suback,
            12 => Self::Pingreq,
            13 => Self::Pingresp,
            14 => Self::Disconnect,
            _ => return None,
        })
    }

    /// Fixed-header flag nibble every packet type except PUBLISH must carry.
    pub fn required_flags(self) -> u8 {
        match self {
            Self::Pubrel | Self::Subscribe => 0b0010,
            _ => 0,
        }
    }
}

impl Packet {
    pub fn packet_type(&self) -> PacketType {
        match self {
            Packet::Connect(_) => PacketType::Connect,
            Packet::Connack(_) => PacketType::Connack,
            Packet::Publish(_) => PacketType::Publish,
            Packet::Puback(_) => PacketType::Puback,
            Packet::Pubrec(_) => PacketType::Pubrec,
            Packet::Pubrel(_) => PacketType::Pubrel,
            Packet::Pubcomp(_) => PacketType::Pubcomp,
            Packet::Subscribe(_) => PacketType::Subscribe,
            Packet::Suback(_) => PacketType::Suback,
            Packet::Pingreq(_) => PacketType::Pingreq,
            Packet::Pingresp => PacketType::Pingresp,
            Packet::Disconnect(_) => PacketType::Disconnect,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broker_flag_bit_arithmetic() {
        assert_eq!(set_broker_flag(0x05), 0x85);
        assert!(has_broker_flag(0x85));
        assert_eq!(0x85 & !BROKER_FLAG, 0x05);
        assert!(!has_broker_flag(0x04));
        for v in 0..=u8::MAX {
            assert_eq!(set_broker_flag(set_broker_flag(v)), set_broker_flag(v));
        }
    }

    #[test]
    fn connect_reports_broker_flag() {
        let mut c = Connect::new(ProtocolVersion::V5, "b", 10);
        assert_eq!(c.protocol_version_byte(), 0x05);
        assert!(!c.is_broker_connect());
        c.broker = true;
        assert_eq!(c.protocol_version_byte(), 0x85);
        assert!(c.is_broker_connect());
        assert_eq!(
            ProtocolVersion::from_byte(c.protocol_version_byte() & !BROKER_FLAG),
            Some(ProtocolVersion::V5)
        );
    }
}
