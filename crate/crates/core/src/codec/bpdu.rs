//! Spanning-tree control record carried in the body of a PINGREQ.
//!
//! Layout, all integers big-endian:
//!
//! ```text
//!  0..4   root ip            4..6   root port
//!  6..14  root capability
//! 14..18  sender ip         18..20  sender port
//! 20..28  sender capability
//! 28..32  root path cost (microseconds)
//! 32      flags: bit 0 topology change, bit 1 root link
//! 33..35  topology epoch
//! 35      reserved (zero)
//! ```

use std::net::Ipv4Addr;

use bytes::{Buf, BufMut};
use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::BrokerId;

/// Encoded size of a [`BpduPayload`].
pub const BPDU_LEN: usize = 36;

const FLAG_TOPOLOGY_CHANGE: u8 = 0x01;
const FLAG_ROOT_LINK: u8 = 0x02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BpduPayload {
    pub root_id: BrokerId,
    pub root_capability: u64,
    pub sender_id: BrokerId,
    pub sender_capability: u64,
    pub root_path_cost_us: u32,
    pub topology_change: bool,
    /// The link this record travels on is the sender's root connection.
    pub root_link: bool,
    pub epoch: u16,
}

impl BpduPayload {
    pub fn encode<B: BufMut>(&self, out: &mut B) {
        put_id(out, self.root_id);
        out.put_u64(self.root_capability);
        put_id(out, self.sender_id);
        out.put_u64(self.sender_capability);
        out.put_u32(self.root_path_cost_us);
        let mut flags = 0;
        if self.topology_change {
            flags |= FLAG_TOPOLOGY_CHANGE;
        }
        if self.root_link {
            flags |= FLAG_ROOT_LINK;
        }
        out.put_u8(flags);
        out.put_u16(self.epoch);
        out.put_u8(0);
    }

    pub fn to_bytes(&self) -> [u8; BPDU_LEN] {
        let mut buf = [0u8; BPDU_LEN];
        self.encode(&mut &mut buf[..]);
        buf
    }

    /// Decodes exactly [`BPDU_LEN`] bytes. Unknown flag bits and the
    /// reserved octet are ignored.
    pub fn decode(mut bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() != BPDU_LEN {
            return Err(CodecError::InvalidBpduLength(bytes.len()));
        }
        let root_id = get_id(&mut bytes);
        let root_capability = bytes.get_u64();
        let sender_id = get_id(&mut bytes);
        let sender_capability = bytes.get_u64();
        let root_path_cost_us = bytes.get_u32();
        let flags = bytes.get_u8();
        let epoch = bytes.get_u16();
        Ok(Self {
            root_id,
            root_capability,
            sender_id,
            sender_capability,
            root_path_cost_us,
            topology_change: flags & FLAG_TOPOLOGY_CHANGE != 0,
            root_link: flags & FLAG_ROOT_LINK != 0,
            epoch,
        })
    }
}

fn put_id<B: BufMut>(out: &mut B, id: BrokerId) {
    out.put_slice(&id.ip.octets());
    out.put_u16(id.port);
}

fn get_id(bytes: &mut &[u8]) -> BrokerId {
    let ip = Ipv4Addr::from(bytes.get_u32());
    BrokerId::new(ip, bytes.get_u16())
}
