//! MQTT packet subset used by clients and bridges, plus the broker-mesh
//! extensions: the broker flag on CONNECT and the spanning-tree record
//! appended to PINGREQ.
//!
//! Packets other than CONNECT are version dependent (MQTT 5 adds property
//! blocks and reason codes), so every entry point takes the negotiated
//! [`ProtocolVersion`]. CONNECT carries its own version and decodes the same
//! way under either setting.

mod bpdu;
mod packet;

use bytes::{Buf, BufMut, Bytes, BytesMut};
use tokio_util::codec::{Decoder, Encoder};

pub use bpdu::{BpduPayload, BPDU_LEN};
pub use packet::{
    connack_code, has_broker_flag, set_broker_flag, Ack, Connack, Connect, Disconnect, Packet,
    PacketType, Properties, ProtocolVersion, Publish, QoS, Suback, Subscribe, SubscribeFilter,
    Will, BROKER_FLAG,
};

/// Largest value the four-byte Remaining Length field can carry.
pub const MAX_REMAINING_LENGTH: usize = 268_435_455;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("malformed remaining length")]
    MalformedRemainingLength,
    #[error("unknown packet type {0}")]
    UnknownPacketType(u8),
    #[error("truncated packet: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after packet")]
    TrailingBytes(usize),
    #[error("invalid fixed header flags {flags:#06b} for {packet:?}")]
    InvalidFlags { packet: PacketType, flags: u8 },
    #[error("invalid QoS {0}")]
    InvalidQos(u8),
    #[error("PINGREQ body must be 0 or {BPDU_LEN} bytes, got {0}")]
    InvalidBpduLength(usize),
    #[error("unsupported protocol name {0:?}")]
    UnsupportedProtocolName(String),
    #[error("unsupported protocol version {0:#04x}")]
    UnsupportedProtocolVersion(u8),
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
    #[error("invalid UTF-8 string")]
    InvalidUtf8,
    #[error("packet of {0} bytes exceeds the remaining length limit")]
    PacketTooLarge(usize),
    #[error("field of {0} bytes exceeds the 65535 byte limit")]
    FieldTooLong(usize),
    #[error("properties are not allowed on MQTT 3.1.1")]
    PropertiesNotAllowed,
    #[error("cannot encode packet: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Encodes `packet` into a freshly allocated buffer.
pub fn encode_packet(packet: &Packet, version: ProtocolVersion) -> Result<Bytes, CodecError> {
    let mut out = BytesMut::new();
    encode_into(packet, version, &mut out)?;
    Ok(out.freeze())
}

/// Decodes exactly one complete packet occupying all of `bytes`.
pub fn decode_packet(bytes: &[u8], version: ProtocolVersion) -> Result<Packet, CodecError> {
    if bytes.is_empty() {
        return Err(CodecError::Truncated {
            needed: 2,
            available: 0,
        });
    }
    let (header_len, remaining) = match parse_fixed_header(bytes)? {
        Some(h) => h,
        None => {
            return Err(CodecError::Truncated {
                needed: bytes.len() + 1,
                available: bytes.len(),
            })
        }
    };
    let total = header_len + remaining;
    if bytes.len() < total {
        return Err(CodecError::Truncated {
            needed: total,
            available: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(CodecError::TrailingBytes(bytes.len() - total));
    }
    decode_frame(bytes[0], Bytes::copy_from_slice(&bytes[header_len..]), version)
}

/// Returns `(header length, remaining length)` once the whole fixed header is
/// available, `None` while more bytes are needed.
fn parse_fixed_header(bytes: &[u8]) -> Result<Option<(usize, usize)>, CodecError> {
    let mut value = 0usize;
    for i in 0..4 {
        let Some(&b) = bytes.get(1 + i) else {
            return Ok(None);
        };
        value |= ((b & 0x7F) as usize) << (7 * i);
        if b & 0x80 == 0 {
            return Ok(Some((2 + i, value)));
        }
    }
    Err(CodecError::MalformedRemainingLength)
}

fn put_remaining_length(out: &mut BytesMut, mut len: usize) {
    loop {
        let mut byte = (len % 128) as u8;
        len /= 128;
        if len > 0 {
            byte |= 0x80;
        }
        out.put_u8(byte);
        if len == 0 {
            break;
        }
    }
}

fn varint_len(len: usize) -> usize {
    match len {
        0..=127 => 1,
        128..=16_383 => 2,
        16_384..=2_097_151 => 3,
        _ => 4,
    }
}

/// Appends the wire form of `packet` to `out`.
pub fn encode_into(
    packet: &Packet,
    version: ProtocolVersion,
    out: &mut BytesMut,
) -> Result<(), CodecError> {
    let mut body = BytesMut::new();
    let v5 = version == ProtocolVersion::V5;
    let flags = match packet {
        Packet::Connect(c) => {
            encode_connect(c, &mut body)?;
            0
        }
        Packet::Connack(c) => {
            body.put_u8(u8::from(c.session_present));
            body.put_u8(c.code);
            put_properties(&mut body, &c.properties, v5)?;
            0
        }
        Packet::Publish(p) => encode_publish(p, v5, &mut body)?,
        Packet::Puback(a) | Packet::Pubrec(a) | Packet::Pubrel(a) | Packet::Pubcomp(a) => {
            encode_ack(a, v5, &mut body)?;
            packet.packet_type().required_flags()
        }
        Packet::Subscribe(s) => {
            check_packet_id(s.packet_id)?;
            if s.filters.is_empty() {
                return Err(CodecError::Invalid("SUBSCRIBE needs at least one filter"));
            }
            body.put_u16(s.packet_id);
            put_properties(&mut body, &s.properties, v5)?;
            for f in &s.filters {
                put_str(&mut body, &f.filter)?;
                let allowed = if v5 { 0b0011_1100 } else { 0 };
                if f.options & !allowed != 0 {
                    return Err(CodecError::Invalid("subscription option bits"));
                }
                body.put_u8(f.qos as u8 | f.options);
            }
            PacketType::Subscribe.required_flags()
        }
        Packet::Suback(s) => {
            check_packet_id(s.packet_id)?;
            body.put_u16(s.packet_id);
            put_properties(&mut body, &s.properties, v5)?;
            body.put_slice(&s.codes);
            0
        }
        Packet::Pingreq(bpdu) => {
            if let Some(b) = bpdu {
                b.encode(&mut body);
            }
            0
        }
        Packet::Pingresp => 0,
        Packet::Disconnect(d) => {
            if v5 {
                if !d.properties.is_empty() {
                    body.put_u8(d.reason);
                    put_properties(&mut body, &d.properties, true)?;
                } else if d.reason != 0 {
                    body.put_u8(d.reason);
                }
            } else if d.reason != 0 || !d.properties.is_empty() {
                return Err(CodecError::Invalid("DISCONNECT body on MQTT 3.1.1"));
            }
            0
        }
    };
    if body.len() > MAX_REMAINING_LENGTH {
        return Err(CodecError::PacketTooLarge(body.len()));
    }
    out.reserve(1 + varint_len(body.len()) + body.len());
    out.put_u8(((packet.packet_type() as u8) << 4) | flags);
    put_remaining_length(out, body.len());
    out.put_slice(&body);
    Ok(())
}

fn encode_connect(c: &Connect, body: &mut BytesMut) -> Result<(), CodecError> {
    let v5 = c.version == ProtocolVersion::V5;
    put_str(body, "MQTT")?;
    body.put_u8(c.protocol_version_byte());
    let mut flags = 0u8;
    if c.clean_start {
        flags |= 0x02;
    }
    if let Some(w) = &c.will {
        flags |= 0x04 | ((w.qos as u8) << 3);
        if w.retain {
            flags |= 0x20;
        }
    }
    if c.password.is_some() {
        if !v5 && c.username.is_none() {
            return Err(CodecError::Invalid("password without username on MQTT 3.1.1"));
        }
        flags |= 0x40;
    }
    if c.username.is_some() {
        flags |= 0x80;
    }
    body.put_u8(flags);
    body.put_u16(c.keep_alive);
    put_properties(body, &c.properties, v5)?;
    put_str(body, &c.client_id)?;
    if let Some(w) = &c.will {
        put_properties(body, &w.properties, v5)?;
        put_str(body, &w.topic)?;
        put_binary(body, &w.payload)?;
    }
    if let Some(u) = &c.username {
        put_str(body, u)?;
    }
    if let Some(p) = &c.password {
        put_binary(body, p)?;
    }
    Ok(())
}

fn encode_publish(p: &Publish, v5: bool, body: &mut BytesMut) -> Result<u8, CodecError> {
    if has_wildcard(&p.topic) {
        return Err(CodecError::Invalid("wildcard in topic name"));
    }
    put_str(body, &p.topic)?;
    match (p.qos, p.packet_id) {
        (QoS::AtMostOnce, None) => {
            if p.dup {
                return Err(CodecError::Invalid("DUP set on a QoS 0 PUBLISH"));
            }
        }
        (QoS::AtMostOnce, Some(_)) => return Err(CodecError::Invalid("packet id on QoS 0")),
        (_, Some(id)) => {
            check_packet_id(id)?;
            body.put_u16(id);
        }
        (_, None) => return Err(CodecError::Invalid("missing packet id for QoS > 0")),
    }
    put_properties(body, &p.properties, v5)?;
    body.put_slice(&p.payload);
    Ok((u8::from(p.dup) << 3) | ((p.qos as u8) << 1) | u8::from(p.retain))
}

fn encode_ack(a: &Ack, v5: bool, body: &mut BytesMut) -> Result<(), CodecError> {
    check_packet_id(a.packet_id)?;
    body.put_u16(a.packet_id);
    if v5 {
        if !a.properties.is_empty() {
            body.put_u8(a.reason);
            put_properties(body, &a.properties, true)?;
        } else if a.reason != 0 {
            body.put_u8(a.reason);
        }
    } else if a.reason != 0 || !a.properties.is_empty() {
        return Err(CodecError::Invalid("reason code on MQTT 3.1.1 acknowledgement"));
    }
    Ok(())
}

fn check_packet_id(id: u16) -> Result<(), CodecError> {
    if id == 0 {
        Err(CodecError::Invalid("packet id 0"))
    } else {
        Ok(())
    }
}

fn has_wildcard(topic: &str) -> bool {
    topic.contains(['+', '#'])
}

fn put_str(out: &mut BytesMut, s: &str) -> Result<(), CodecError> {
    if s.contains('\0') {
        return Err(CodecError::Invalid("NUL character in string"));
    }
    put_binary(out, s.as_bytes())
}

fn put_binary(out: &mut BytesMut, b: &[u8]) -> Result<(), CodecError> {
    let len = u16::try_from(b.len()).map_err(|_| CodecError::FieldTooLong(b.len()))?;
    out.put_u16(len);
    out.put_slice(b);
    Ok(())
}

fn put_properties(out: &mut BytesMut, props: &Bytes, v5: bool) -> Result<(), CodecError> {
    if !v5 {
        return if props.is_empty() {
            Ok(())
        } else {
            Err(CodecError::PropertiesNotAllowed)
        };
    }
    put_remaining_length(out, props.len());
    out.put_slice(props);
    Ok(())
}

/// Cursor over a packet body. Running past the end of a complete frame is a
/// malformation, not truncation.
struct Reader {
    buf: Bytes,
}

impl Reader {
    fn remaining(&self) -> usize {
        self.buf.len()
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        if self.buf.is_empty() {
            return Err(CodecError::Malformed("field runs past end of packet"));
        }
        Ok(self.buf.get_u8())
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        if self.buf.len() < 2 {
            return Err(CodecError::Malformed("field runs past end of packet"));
        }
        Ok(self.buf.get_u16())
    }

    fn take(&mut self, n: usize) -> Result<Bytes, CodecError> {
        if self.buf.len() < n {
            return Err(CodecError::Malformed("field runs past end of packet"));
        }
        Ok(self.buf.split_to(n))
    }

    fn binary(&mut self) -> Result<Bytes, CodecError> {
        let n = self.u16()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String, CodecError> {
        let raw = self.binary()?;
        let s = std::str::from_utf8(&raw).map_err(|_| CodecError::InvalidUtf8)?;
        if s.contains('\0') {
            return Err(CodecError::Malformed("NUL character in string"));
        }
        Ok(s.to_string())
    }

    fn varint(&mut self) -> Result<usize, CodecError> {
        let mut value = 0usize;
        for i in 0..4 {
            let b = self.u8()?;
            value |= ((b & 0x7F) as usize) << (7 * i);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(CodecError::Malformed("variable byte integer longer than 4 bytes"))
    }

    fn properties(&mut self, v5: bool) -> Result<Bytes, CodecError> {
        if !v5 {
            return Ok(Bytes::new());
        }
        let n = self.varint()?;
        self.take(n)
    }

    fn rest(&mut self) -> Bytes {
        std::mem::take(&mut self.buf)
    }

    fn finish(self) -> Result<(), CodecError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(CodecError::Malformed("unexpected bytes at end of packet"))
        }
    }
}

fn decode_frame(first: u8, body: Bytes, version: ProtocolVersion) -> Result<Packet, CodecError> {
    let nibble = first >> 4;
    let flags = first & 0x0F;
    let kind = PacketType::from_nibble(nibble).ok_or(CodecError::UnknownPacketType(nibble))?;
    if kind != PacketType::Publish && flags != kind.required_flags() {
        return Err(CodecError::InvalidFlags {
            packet: kind,
            flags,
        });
    }
    let v5 = version == ProtocolVersion::V5;
    let len = body.len();
    let mut r = Reader { buf: body };
    let packet = match kind {
        PacketType::Connect => Packet::Connect(decode_connect(&mut r)?),
        PacketType::Connack => {
            let ack_flags = r.u8()?;
            if ack_flags & 0xFE != 0 {
                return Err(CodecError::Malformed("reserved CONNACK flag bits set"));
            }
            let code = r.u8()?;
            let properties = r.properties(v5)?;
            Packet::Connack(Connack {
                session_present: ack_flags & 1 == 1,
                code,
                properties,
            })
        }
        PacketType::Publish => {
            let qos_bits = (flags >> 1) & 0b11;
            let qos = QoS::from_u8(qos_bits).ok_or(CodecError::InvalidQos(qos_bits))?;
            let dup = flags & 0b1000 != 0;
            if dup && qos == QoS::AtMostOnce {
                return Err(CodecError::Malformed("DUP set on a QoS 0 PUBLISH"));
            }
            let topic = r.string()?;
            if has_wildcard(&topic) {
                return Err(CodecError::Malformed("wildcard in topic name"));
            }
            let packet_id = if qos == QoS::AtMostOnce {
                None
            } else {
                Some(nonzero_id(r.u16()?)?)
            };
            let properties = r.properties(v5)?;
            Packet::Publish(Publish {
                dup,
                qos,
                retain: flags & 1 == 1,
                topic,
                packet_id,
                payload: r.rest(),
                properties,
            })
        }
        PacketType::Puback | PacketType::Pubrec | PacketType::Pubrel | PacketType::Pubcomp => {
            let ack = decode_ack(&mut r, v5)?;
            match kind {
                PacketType::Puback => Packet::Puback(ack),
                PacketType::Pubrec => Packet::Pubrec(ack),
                PacketType::Pubrel => Packet::Pubrel(ack),
                _ => Packet::Pubcomp(ack),
            }
        }
        PacketType::Subscribe => {
            let packet_id = nonzero_id(r.u16()?)?;
            let properties = r.properties(v5)?;
            let mut filters = Vec::new();
            while r.remaining() > 0 {
                let filter = r.string()?;
                let opts = r.u8()?;
                let reserved = if v5 { 0b1100_0000 } else { 0b1111_1100 };
                if opts & reserved != 0 {
                    return Err(CodecError::Malformed("reserved subscription option bits set"));
                }
                let qos = QoS::from_u8(opts & 0b11).ok_or(CodecError::InvalidQos(opts & 0b11))?;
                filters.push(SubscribeFilter {
                    filter,
                    qos,
                    options: opts & 0b0011_1100,
                });
            }
            if filters.is_empty() {
                return Err(CodecError::Malformed("SUBSCRIBE without filters"));
            }
            Packet::Subscribe(Subscribe {
                packet_id,
                filters,
                properties,
            })
        }
        PacketType::Suback => {
            let packet_id = nonzero_id(r.u16()?)?;
            let properties = r.properties(v5)?;
            Packet::Suback(Suback {
                packet_id,
                codes: r.rest().to_vec(),
                properties,
            })
        }
        PacketType::Pingreq => match len {
            0 => Packet::Pingreq(None),
            BPDU_LEN => Packet::Pingreq(Some(BpduPayload::decode(&r.rest())?)),
            n => return Err(CodecError::InvalidBpduLength(n)),
        },
        PacketType::Pingresp => {
            if len != 0 {
                return Err(CodecError::Malformed("PINGRESP with a body"));
            }
            Packet::Pingresp
        }
        PacketType::Disconnect => {
            let mut d = Disconnect::default();
            if len > 0 {
                if !v5 {
                    return Err(CodecError::Malformed("DISCONNECT body on MQTT 3.1.1"));
                }
                d.reason = r.u8()?;
                if r.remaining() > 0 {
                    d.properties = r.properties(true)?;
                }
            }
            Packet::Disconnect(d)
        }
    };
    r.finish()?;
    Ok(packet)
}

fn nonzero_id(id: u16) -> Result<u16, CodecError> {
    if id == 0 {
        Err(CodecError::Malformed("packet id 0"))
    } else {
        Ok(id)
    }
}

fn decode_ack(r: &mut Reader, v5: bool) -> Result<Ack, CodecError> {
    let packet_id = nonzero_id(r.u16()?)?;
    let mut ack = Ack::new(packet_id);
    if r.remaining() > 0 {
        if !v5 {
            return Err(CodecError::Malformed("acknowledgement longer than 2 bytes"));
        }
        ack.reason = r.u8()?;
        if r.remaining() > 0 {
            ack.properties = r.properties(true)?;
        }
    }
    Ok(ack)
}

fn decode_connect(r: &mut Reader) -> Result<Connect, CodecError> {
    let name = r.string()?;
    if name != "MQTT" {
        return Err(CodecError::UnsupportedProtocolName(name));
    }
    let version_byte = r.u8()?;
    let version = ProtocolVersion::from_byte(version_byte & !BROKER_FLAG)
        .ok_or(CodecError::UnsupportedProtocolVersion(version_byte))?;
    let v5 = version == ProtocolVersion::V5;
    let flags = r.u8()?;
    if flags & 0x01 != 0 {
        return Err(CodecError::Malformed("reserved CONNECT flag set"));
    }
    let will_flag = flags & 0x04 != 0;
    let will_qos_bits = (flags >> 3) & 0b11;
    let will_retain = flags & 0x20 != 0;
    if !will_flag && (will_qos_bits != 0 || will_retain) {
        return Err(CodecError::Malformed("will QoS or retain without will flag"));
    }
    let will_qos = QoS::from_u8(will_qos_bits).ok_or(CodecError::InvalidQos(will_qos_bits))?;
    let has_password = flags & 0x40 != 0;
    let has_username = flags & 0x80 != 0;
    if !v5 && has_password && !has_username {
        return Err(CodecError::Malformed("password without username"));
    }
    let keep_alive = r.u16()?;
    let properties = r.properties(v5)?;
    let client_id = r.string()?;
    let will = if will_flag {
        let properties = r.properties(v5)?;
        let topic = r.string()?;
        if has_wildcard(&topic) {
            return Err(CodecError::Malformed("wildcard in will topic"));
        }
        let payload = r.binary()?;
        Some(Will {
            topic,
            payload,
            qos: will_qos,
            retain: will_retain,
            properties,
        })
    } else {
        None
    };
    let username = if has_username { Some(r.string()?) } else { None };
    let password = if has_password { Some(r.binary()?) } else { None };
    Ok(Connect {
        version,
        broker: has_broker_flag(version_byte),
        clean_start: flags & 0x02 != 0,
        keep_alive,
        client_id,
        will,
        username,
        password,
        properties,
    })
}

/// Streaming framer for `tokio_util::codec::Framed`.
#[derive(Debug, Clone)]
pub struct MqttCodec {
    version: ProtocolVersion,
    max_packet: usize,
}

impl MqttCodec {
    pub fn new(version: ProtocolVersion) -> Self {
        Self {
            version,
            max_packet: MAX_REMAINING_LENGTH,
        }
    }

    pub fn with_max_packet(mut self, max: usize) -> Self {
        self.max_packet = max.min(MAX_REMAINING_LENGTH);
        self
    }

    pub fn version(&self) -> ProtocolVersion {
        self.version
    }

    pub fn set_version(&mut self, version: ProtocolVersion) {
        self.version = version;
    }
}

impl Decoder for MqttCodec {
    type Item = Packet;
    type Error = CodecError;

    fn decode(&mut self, src: &mut BytesMut) -> Result<Option<Packet>, CodecError> {
        if src.is_empty() {
            return Ok(None);
        }
        let Some((header_len, remaining)) = parse_fixed_header(src)? else {
            return Ok(None);
        };
        if remaining > self.max_packet {
            return Err(CodecError::PacketTooLarge(remaining));
        }
        let total = header_len + remaining;
        if src.len() < total {
            src.reserve(total - src.len());
            return Ok(None);
        }
        let mut frame = src.split_to(total).freeze();
        let first = frame[0];
        frame.advance(header_len);
        decode_frame(first, frame, self.version).map(Some)
    }
}

impl Encoder<Packet> for MqttCodec {
    type Error = CodecError;

    fn encode(&mut self, item: Packet, dst: &mut BytesMut) -> Result<(), CodecError> {
        encode_into(&item, self.version, dst)
    }
}

impl Encoder<&Packet> for MqttCodec {
    type Error = CodecError;

    fn encode(&mut self, item: &Packet, dst: &mut BytesMut) -> Result<(), CodecError> {
        encode_into(item, self.version, dst)
    }
}
