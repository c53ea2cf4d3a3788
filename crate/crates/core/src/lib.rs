//! Broker federation over a self-organising spanning tree.
//!
//! Brokers bridge to each other with broker-flagged MQTT CONNECTs, exchange
//! tree state inside PINGREQ bodies, elect the most capable broker as root
//! and replicate every publication along the resulting tree.

pub mod broker;
pub mod broker_id;
pub mod capability;
pub mod client;
pub mod codec;
pub mod config;
pub mod qos;
pub mod routing;
pub mod topic;
pub mod tree;

pub use broker_id::BrokerId;
pub use capability::{compute_capability, Capability, CapabilityError};
pub use codec::{BpduPayload, MqttCodec, Packet, QoS};
pub use tree::{better_root, Action, LinkId, Role, RoleSnapshot, Timestamp, TreeState, TreeTimers};
