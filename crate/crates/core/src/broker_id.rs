use std::fmt;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Identity of a broker in the mesh: its advertised IPv4 address and listen port.
///
/// The derived ordering compares the address as a 32-bit big-endian integer
/// first and the port second. Every tie-break in the tree uses this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BrokerId {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl BrokerId {
    pub const fn new(ip: Ipv4Addr, port: u16) -> Self {
        Self { ip, port }
    }

    pub fn socket_addr(&self) -> SocketAddrV4 {
        SocketAddrV4::new(self.ip, self.port)
    }
}

impl From<SocketAddrV4> for BrokerId {
    fn from(addr: SocketAddrV4) -> Self {
        Self::new(*addr.ip(), addr.port())
    }
}

impl fmt::Display for BrokerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid broker id {0:?}: expected <ipv4>:<port>")]
pub struct ParseBrokerIdError(String);

impl FromStr for BrokerId {
    type Err = ParseBrokerIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<SocketAddrV4>()
            .map(Self::from)
            .map_err(|_| ParseBrokerIdError(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> BrokerId {
        s.parse().unwrap()
    }

    #[test]
    fn orders_by_address_then_port() {
        assert!(id("10.0.0.1:1883") < id("10.0.0.2:1883"));
        assert!(id("10.0.0.1:1883") < id("10.0.0.1:1884"));
        assert!(id("9.255.255.255:65535") < id("10.0.0.0:1"));
        // numeric, not lexicographic on the dotted string
        assert!(id("10.0.0.9:1") < id("10.0.0.10:1"));
    }

    #[test]
    fn display_round_trips() {
        let b = id("192.168.1.7:1883");
        assert_eq!(b.to_string().parse::<BrokerId>().unwrap(), b);
        assert!("localhost:1883".parse::<BrokerId>().is_err());
    }
}
