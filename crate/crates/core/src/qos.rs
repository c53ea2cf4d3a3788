//! Per-session QoS 1/2 bookkeeping.
//!
//! Inbound QoS 2 uses the store-packet-id variant: the publication is passed
//! on when the PUBLISH arrives and its id is held until PUBREL, so a
//! retransmitted PUBLISH inside that window is acknowledged but not delivered
//! again.

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::QoS;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QosError {
    #[error("{packet} for packet id {id} with no matching exchange")]
    UnexpectedAck { packet: &'static str, id: u16 },
    #[error("{packet} for packet id {id} out of order")]
    OutOfOrder { packet: &'static str, id: u16 },
    #[error("all packet ids in use")]
    IdsExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutboundPhase {
    AwaitPuback,
    AwaitPubrec,
    AwaitPubcomp,
}

/// Exchanges this side started as sender.
#[derive(Debug, Clone, Default)]
pub struct Outbound {
    next_id: u16,
    inflight: BTreeMap<u16, OutboundPhase>,
}

impl Outbound {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn inflight(&self) -> usize {
        self.inflight.len()
    }

    pub fn phase(&self, id: u16) -> Option<OutboundPhase> {
        self.inflight.get(&id).copied()
    }

    /// Reserves a fresh packet id for a QoS 1 or 2 PUBLISH.
    pub fn start(&mut self, qos: QoS) -> Result<u16, QosError> {
        let phase = match qos {
            QoS::AtMostOnce => unreachable!("QoS 0 has no exchange"),
            QoS::AtLeastOnce => OutboundPhase::AwaitPuback,
            QoS::ExactlyOnce => OutboundPhase::AwaitPubrec,
        };
        if self.inflight.len() >= u16::MAX as usize {
            return Err(QosError::IdsExhausted);
        }
        loop {
            self.next_id = self.next_id.wrapping_add(1);
            if self.next_id != 0 && !self.inflight.contains_key(&self.next_id) {
                break;
            }
        }
        self.inflight.insert(self.next_id, phase);
        Ok(self.next_id)
    }

    pub fn on_puback(&mut self, id: u16) -> Result<(), QosError> {
        self.advance(id, "PUBACK", OutboundPhase::AwaitPuback, None)
    }

    /// On success the caller sends PUBREL.
    pub fn on_pubrec(&mut self, id: u16) -> Result<(), QosError> {
        self.advance(
            id,
            "PUBREC",
            OutboundPhase::AwaitPubrec,
            Some(OutboundPhase::AwaitPubcomp),
        )
    }

    pub fn on_pubcomp(&mut self, id: u16) -> Result<(), QosError> {
        self.advance(id, "PUBCOMP", OutboundPhase::AwaitPubcomp, None)
    }

    fn advance(
        &mut self,
        id: u16,
        packet: &'static str,
        expect: OutboundPhase,
        next: Option<OutboundPhase>,
    ) -> Result<(), QosError> {
        match self.inflight.get(&id) {
            None => Err(QosError::UnexpectedAck { packet, id }),
            Some(p) if *p != expect => Err(QosError::OutOfOrder { packet, id }),
            Some(_) => {
                match next {
                    Some(n) => {
                        self.inflight.insert(id, n);
                    }
                    None => {
                        self.inflight.remove(&id);
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InboundDecision {
    /// First sight of this publication: pass it on, then acknowledge.
    Deliver,
    /// Retransmission inside an open exchange: acknowledge only.
    Duplicate,
}

/// QoS 2 exchanges this side is receiving.
#[derive(Debug, Clone, Default)]
pub struct Inbound {
    awaiting_rel: BTreeSet<u16>,
}

impl Inbound {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending(&self) -> usize {
        self.awaiting_rel.len()
    }

    /// Caller answers with PUBREC either way.
    pub fn on_publish(&mut self, id: u16) -> InboundDecision {
        if self.awaiting_rel.insert(id) {
            InboundDecision::Deliver
        } else {
            InboundDecision::Duplicate
        }
    }

    /// On success the caller answers with PUBCOMP.
    pub fn on_pubrel(&mut self, id: u16) -> Result<(), QosError> {
        if self.awaiting_rel.remove(&id) {
            Ok(())
        } else {
            Err(QosError::UnexpectedAck {
                packet: "PUBREL",
                id,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Eq)]
    enum Wire {
        Publish { id: u16, dup: bool },
        Pubrec(u16),
        Pubrel(u16),
        Pubcomp(u16),
    }

    /// Runs one exchange between a sender and a receiver, optionally
    /// retransmitting the PUBLISH before the receiver's PUBREC is seen.
    fn transcript(retransmit: bool) -> (Vec<Wire>, usize) {
        let mut tx = Outbound::new();
        let mut rx = Inbound::new();
        let mut wire = Vec::new();
        let mut delivered = 0;
        let id = tx.start(QoS::ExactlyOnce).unwrap();
        wire.push(Wire::Publish { id, dup: false });
        if rx.on_publish(id) == InboundDecision::Deliver {
            delivered += 1;
        }
        if retransmit {
            wire.push(Wire::Publish { id, dup: true });
            if rx.on_publish(id) == InboundDecision::Deliver {
                delivered += 1;
            }
            wire.push(Wire::Pubrec(id));
        }
        wire.push(Wire::Pubrec(id));
        tx.on_pubrec(id).unwrap();
        if retransmit {
            // second PUBREC finds the exchange already past that phase
            assert!(matches!(tx.on_pubrec(id), Err(QosError::OutOfOrder { .. })));
        }
        wire.push(Wire::Pubrel(id));
        rx.on_pubrel(id).unwrap();
        wire.push(Wire::Pubcomp(id));
        tx.on_pubcomp(id).unwrap();
        assert_eq!(tx.inflight(), 0);
        assert_eq!(rx.pending(), 0);
        (wire, delivered)
    }

    #[test]
    fn nominal_four_way_exchange_delivers_once() {
        let (wire, delivered) = transcript(false);
        assert_eq!(
            wire,
            vec![
                Wire::Publish { id: 1, dup: false },
                Wire::Pubrec(1),
                Wire::Pubrel(1),
                Wire::Pubcomp(1)
            ]
        );
        assert_eq!(delivered, 1);
    }

    #[test]
    fn duplicate_publish_before_pubrec_delivers_once() {
        let (_, delivered) = transcript(true);
        assert_eq!(delivered, 1);
    }

    #[test]
    fn pubrel_without_publish_is_an_error() {
        let mut rx = Inbound::new();
        assert_eq!(
            rx.on_pubrel(9),
            Err(QosError::UnexpectedAck {
                packet: "PUBREL",
                id: 9
            })
        );
    }

    #[test]
    fn pubcomp_before_pubrec_is_out_of_order() {
        let mut tx = Outbound::new();
        let id = tx.start(QoS::ExactlyOnce).unwrap();
        assert!(matches!(tx.on_pubcomp(id), Err(QosError::OutOfOrder { .. })));
        assert!(matches!(tx.on_puback(id), Err(QosError::OutOfOrder { .. })));
        assert!(matches!(tx.on_pubrec(id + 1), Err(QosError::UnexpectedAck { .. })));
    }

    #[test]
    fn ids_skip_zero_and_busy_values() {
        let mut tx = Outbound::new();
        tx.next_id = u16::MAX - 1;
        let a = tx.start(QoS::AtLeastOnce).unwrap();
        let b = tx.start(QoS::AtLeastOnce).unwrap();
        assert_eq!((a, b), (u16::MAX, 1));
        tx.next_id = u16::MAX - 1;
        let c = tx.start(QoS::AtLeastOnce).unwrap();
        assert_eq!(c, 2);
        tx.on_puback(a).unwrap();
        assert_eq!(tx.inflight(), 2);
    }
}
