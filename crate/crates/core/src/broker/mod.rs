//! Networked broker: MQTT listener, bridge maintenance and the core actor.

mod conn;
mod core;
pub mod status;

use std::collections::BTreeSet;
use std::net::{SocketAddr, SocketAddrV4};
use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;

use crate::capability::{Capability, CapabilityError};
use crate::codec::{Connect, Packet, Publish};
use crate::config::BrokerConfig;
use crate::tree::{Timestamp, TreeState, TreeTimers};
use crate::BrokerId;

pub use conn::{bridge_client_id, parse_bridge_client_id};
pub use status::{BrokerStatus, Counters, LinkStatus, LogEvent, LogLine, TrafficSample};

pub(crate) type ConnId = u64;
pub(crate) type Outbox = mpsc::UnboundedSender<Packet>;

pub(crate) enum Event {
    ClientUp {
        conn: ConnId,
        connect: Connect,
        addr: SocketAddr,
        tx: Outbox,
        kill: oneshot::Sender<()>,
    },
    BridgeUp {
        conn: ConnId,
        peer: BrokerId,
        initiated_by_self: bool,
        tx: Outbox,
        kill: oneshot::Sender<()>,
    },
    Packet {
        conn: ConnId,
        packet: Packet,
    },
    Closed {
        conn: ConnId,
        reason: String,
    },
    Status(oneshot::Sender<BrokerStatus>),
    InjectBridgePublish {
        peer: BrokerId,
        publish: Publish,
        reply: oneshot::Sender<Option<RouteSummary>>,
    },
    Shutdown,
}

/// Outcome of routing one injected publication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteSummary {
    pub deliveries: u64,
    pub forwards: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddrV4,
        source: std::io::Error,
    },
    #[error(transparent)]
    Capability(#[from] CapabilityError),
    #[error("cannot open event log: {0}")]
    EventLog(std::io::Error),
}

/// A running broker. Dropping the handle leaves it running; call
/// [`BrokerHandle::shutdown`] to stop it.
pub struct BrokerHandle {
    id: BrokerId,
    local_addr: SocketAddr,
    capability: Capability,
    events: mpsc::UnboundedSender<Event>,
    core: JoinHandle<()>,
    tasks: Vec<JoinHandle<()>>,
}

impl BrokerHandle {
    pub fn id(&self) -> BrokerId {
        self.id
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn capability(&self) -> Capability {
        self.capability
    }

    pub async fn status(&self) -> Option<BrokerStatus> {
        let (tx, rx) = oneshot::channel();
        self.events.send(Event::Status(tx)).ok()?;
        rx.await.ok()
    }

    /// Routes `publish` as if it had arrived on the bridge to `peer`.
    /// `None` when no such bridge exists.
    pub async fn inject_bridge_publish(&self, peer: BrokerId, publish: Publish) -> Option<RouteSummary> {
        let (reply, rx) = oneshot::channel();
        self.events
            .send(Event::InjectBridgePublish {
                peer,
                publish,
                reply,
            })
            .ok()?;
        rx.await.ok().flatten()
    }

    /// Stops accepting, closes every connection and waits for the core.
    pub async fn shutdown(self) {
        for t in &self.tasks {
            t.abort();
        }
        let _ = self.events.send(Event::Shutdown);
        let _ = self.core.await;
    }

    /// Resolves when the broker stops on its own.
    pub async fn wait(self) {
        let _ = self.core.await;
    }
}

/// Binds the listener and starts the broker on the current runtime.
pub async fn start(cfg: BrokerConfig) -> Result<BrokerHandle, BrokerError> {
    let bind = SocketAddrV4::new(cfg.listen_address, cfg.listen_port);
    let listener = TcpListener::bind(bind)
        .await
        .map_err(|source| BrokerError::Bind { addr: bind, source })?;
    let local_addr = listener.local_addr().map_err(|source| BrokerError::Bind { addr: bind, source })?;
    let mut id_cfg = cfg.clone();
    id_cfg.listen_port = local_addr.port();
    let id = id_cfg.broker_id();

    let capability = match cfg.capability {
        Some((l, r)) => Capability::new(l, r, cfg.alpha, cfg.beta)?,
        None => Capability::from_system(cfg.alpha, cfg.beta)?,
    };
    let timers = TreeTimers::from_keep_alive(cfg.keep_alive_duration());
    let tree = TreeState::new(id, capability.value, timers, Timestamp::ZERO);
    let log = status::EventLog::open(id, cfg.event_log.as_deref()).map_err(BrokerError::EventLog)?;
    let traffic = Arc::new(status::Traffic::default());
    let (bridged_tx, bridged_rx) = watch::channel(BTreeSet::new());
    let (events_tx, events_rx) = mpsc::unbounded_channel();

    let ctx = conn::ConnCtx {
        self_id: id,
        keep_alive: cfg.keep_alive,
        events: events_tx.clone(),
        traffic: traffic.clone(),
        next_conn: Arc::new(AtomicU64::new(1)),
    };
    let core = core::Core::new(core::CoreParams {
        id,
        capability: capability.value,
        tree,
        status_file: cfg.status_file.clone(),
        log,
        traffic,
        bridged: bridged_tx,
    });
    tracing::info!("broker {id} capability {} listening on {local_addr}", capability.value);
    let core = tokio::spawn(core.run(events_rx));

    let mut tasks = Vec::new();
    let accept_ctx = ctx.clone();
    tasks.push(tokio::spawn(async move {
        loop {
            match listener.accept().await {
                Ok((stream, addr)) => {
                    tokio::spawn(conn::serve_accepted(stream, addr, accept_ctx.clone()));
                }
                Err(e) => {
                    tracing::warn!("accept failed: {e}");
                    tokio::time::sleep(std::time::Duration::from_millis(50)).await;
                }
            }
        }
    }));
    for peer in &cfg.peers {
        tasks.push(tokio::spawn(conn::maintain_bridge(
            peer.clone(),
            ctx.clone(),
            bridged_rx.clone(),
        )));
    }

    Ok(BrokerHandle {
        id,
        local_addr,
        capability,
        events: events_tx,
        core,
        tasks,
    })
}
