//! Socket tasks: handshakes, a reader feeding the core, a batching writer.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use bytes::BytesMut;
use futures::StreamExt;
use tokio::io::AsyncWriteExt;
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot, watch};
use tokio_util::codec::FramedRead;

use super::status::Traffic;
use super::{ConnId, Event, Outbox};
use crate::codec::{
    connack_code, encode_into, Connack, Connect, MqttCodec, Packet, ProtocolVersion,
};
use crate::BrokerId;

pub(crate) const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
const BRIDGE_ID_PREFIX: &str = "spanmq-bridge/";
const WRITE_BATCH: usize = 64 * 1024;
const BACKOFF_BASE: Duration = Duration::from_secs(1);
const BACKOFF_CAP: Duration = Duration::from_secs(30);

pub fn bridge_client_id(id: BrokerId) -> String {
    format!("{BRIDGE_ID_PREFIX}{id}")
}

pub fn parse_bridge_client_id(client_id: &str) -> Option<BrokerId> {
    client_id.strip_prefix(BRIDGE_ID_PREFIX)?.parse().ok()
}

pub(crate) fn bridge_connect(self_id: BrokerId, keep_alive: u16) -> Connect {
    let mut c = Connect::new(ProtocolVersion::V5, bridge_client_id(self_id), keep_alive);
    c.broker = true;
    c
}

/// Shared by every connection task of one broker.
#[derive(Clone)]
pub(crate) struct ConnCtx {
    pub self_id: BrokerId,
    pub keep_alive: u16,
    pub events: mpsc::UnboundedSender<Event>,
    pub traffic: Arc<Traffic>,
    pub next_conn: Arc<std::sync::atomic::AtomicU64>,
}

impl ConnCtx {
    fn fresh_id(&self) -> ConnId {
        self.next_conn
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed)
    }
}

fn spawn_writer(
    write: OwnedWriteHalf,
    version: ProtocolVersion,
    traffic: Option<Arc<Traffic>>,
) -> Outbox {
    let (tx, rx) = mpsc::unbounded_channel();
    tokio::spawn(write_loop(write, rx, version, traffic));
    tx
}

async fn write_loop(
    mut write: OwnedWriteHalf,
    mut rx: mpsc::UnboundedReceiver<Packet>,
    version: ProtocolVersion,
    traffic: Option<Arc<Traffic>>,
) {
    let mut buf = BytesMut::with_capacity(4096);
    while let Some(first) = rx.recv().await {
        let mut next = Some(first);
        while let Some(p) = next.take() {
            let before = buf.len();
            match encode_into(&p, version, &mut buf) {
                Ok(()) => {
                    if let Some(t) = &traffic {
                        t.record(&p, buf.len() - before);
                    }
                }
                Err(e) => {
                    tracing::warn!("dropping unencodable {:?}: {e}", p.packet_type());
                    buf.truncate(before);
                }
            }
            if buf.len() < WRITE_BATCH {
                next = rx.try_recv().ok();
            }
        }
        if write.write_all(&buf).await.is_err() {
            return;
        }
        buf.clear();
    }
    let _ = write.shutdown().await;
}

async fn read_loop(
    conn: ConnId,
    mut framed: FramedRead<OwnedReadHalf, MqttCodec>,
    events: mpsc::UnboundedSender<Event>,
    mut kill: oneshot::Receiver<()>,
) {
    loop {
        tokio::select! {
            _ = &mut kill => return,
            next = framed.next() => {
                let ev = match next {
                    Some(Ok(packet)) => Event::Packet { conn, packet },
                    Some(Err(e)) => Event::Closed { conn, reason: e.to_string() },
                    None => Event::Closed { conn, reason: "connection closed by peer".into() },
                };
                let done = matches!(ev, Event::Closed { .. });
                if events.send(ev).is_err() || done {
                    return;
                }
            }
        }
    }
}

async fn next_packet(
    framed: &mut FramedRead<OwnedReadHalf, MqttCodec>,
) -> Result<Packet, String> {
    match tokio::time::timeout(HANDSHAKE_TIMEOUT, framed.next()).await {
        Err(_) => Err("handshake timed out".into()),
        Ok(None) => Err("closed during handshake".into()),
        Ok(Some(Err(e))) => Err(e.to_string()),
        Ok(Some(Ok(p))) => Ok(p),
    }
}

/// Serves one accepted socket: client sessions are handed to the core after
/// CONNECT; broker-flagged CONNECTs get CONNACK plus our own CONNECT on the
/// same socket, and become a bridge once the peer acknowledges.
pub(crate) async fn serve_accepted(stream: TcpStream, addr: SocketAddr, ctx: ConnCtx) {
    let _ = stream.set_nodelay(true);
    let (read, write) = stream.into_split();
    let mut framed = FramedRead::new(read, MqttCodec::new(ProtocolVersion::V311));
    let connect = match next_packet(&mut framed).await {
        Ok(Packet::Connect(c)) => c,
        Ok(other) => {
            tracing::debug!("{addr}: first packet {:?}, not CONNECT", other.packet_type());
            return;
        }
        Err(e) => {
            tracing::debug!("{addr}: {e}");
            return;
        }
    };
    framed.decoder_mut().set_version(connect.version);
    let conn = ctx.fresh_id();
    let (kill_tx, kill_rx) = oneshot::channel();

    if !connect.broker {
        let tx = spawn_writer(write, connect.version, None);
        let ev = Event::ClientUp {
            conn,
            connect,
            addr,
            tx,
            kill: kill_tx,
        };
        if ctx.events.send(ev).is_ok() {
            read_loop(conn, framed, ctx.events, kill_rx).await;
        }
        return;
    }

    let tx = spawn_writer(write, connect.version, Some(ctx.traffic.clone()));
    let Some(peer) = parse_bridge_client_id(&connect.client_id) else {
        tracing::warn!("{addr}: broker CONNECT with unparsable id {:?}", connect.client_id);
        let code = match connect.version {
            ProtocolVersion::V311 => connack_code::V311_SERVER_UNAVAILABLE,
            ProtocolVersion::V5 => connack_code::V5_UNSPECIFIED,
        };
        let _ = tx.send(Packet::Connack(Connack {
            code,
            ..Connack::accepted()
        }));
        return;
    };
    let mut reverse = bridge_connect(ctx.self_id, ctx.keep_alive);
    reverse.version = connect.version;
    let _ = tx.send(Packet::Connack(Connack::accepted()));
    let _ = tx.send(Packet::Connect(reverse));
    match next_packet(&mut framed).await {
        Ok(Packet::Connack(ack)) if ack.code == connack_code::ACCEPTED => {}
        Ok(other) => {
            tracing::warn!("bridge from {peer}: expected CONNACK, got {:?}", other.packet_type());
            return;
        }
        Err(e) => {
            tracing::warn!("bridge from {peer}: {e}");
            return;
        }
    }
    let ev = Event::BridgeUp {
        conn,
        peer,
        initiated_by_self: false,
        tx,
        kill: kill_tx,
    };
    if ctx.events.send(ev).is_ok() {
        read_loop(conn, framed, ctx.events, kill_rx).await;
    }
}

/// Opens a bridge to `addr`. On success returns the peer id and a handle
/// that completes when the connection ends.
async fn open_bridge(
    addr: &str,
    ctx: &ConnCtx,
) -> Result<(BrokerId, tokio::task::JoinHandle<()>), String> {
    let stream = tokio::time::timeout(HANDSHAKE_TIMEOUT, TcpStream::connect(addr))
        .await
        .map_err(|_| "connect timed out".to_string())?
        .map_err(|e| e.to_string())?;
    let _ = stream.set_nodelay(true);
    let (read, write) = stream.into_split();
    let mut framed = FramedRead::new(read, MqttCodec::new(ProtocolVersion::V5));
    let tx = spawn_writer(write, ProtocolVersion::V5, Some(ctx.traffic.clone()));
    let _ = tx.send(Packet::Connect(bridge_connect(ctx.self_id, ctx.keep_alive)));
    match next_packet(&mut framed).await? {
        Packet::Connack(ack) if ack.code == connack_code::ACCEPTED => {}
        Packet::Connack(ack) => return Err(format!("refused with code {:#04x}", ack.code)),
        other => return Err(format!("expected CONNACK, got {:?}", other.packet_type())),
    }
    let peer = match next_packet(&mut framed).await? {
        Packet::Connect(c) if c.broker => parse_bridge_client_id(&c.client_id)
            .ok_or_else(|| format!("unparsable bridge id {:?}", c.client_id))?,
        other => return Err(format!("expected broker CONNECT, got {:?}", other.packet_type())),
    };
    let _ = tx.send(Packet::Connack(Connack::accepted()));
    let conn = ctx.fresh_id();
    let (kill_tx, kill_rx) = oneshot::channel();
    ctx.events
        .send(Event::BridgeUp {
            conn,
            peer,
            initiated_by_self: true,
            tx,
            kill: kill_tx,
        })
        .map_err(|_| "broker stopped".to_string())?;
    let events = ctx.events.clone();
    Ok((peer, tokio::spawn(read_loop(conn, framed, events, kill_rx))))
}

/// Keeps a bridge to one configured peer alive: retries with exponential
/// backoff, and after a bridge ends waits until no bridge to that peer
/// remains before reconnecting.
pub(crate) async fn maintain_bridge(
    addr: String,
    ctx: ConnCtx,
    mut bridged: watch::Receiver<std::collections::BTreeSet<BrokerId>>,
) {
    let mut backoff = BACKOFF_BASE;
    loop {
        match open_bridge(&addr, &ctx).await {
            Ok((peer, running)) => {
                let _ = running.await;
                // a duplicate may have been dropped in favour of another socket
                while bridged.borrow_and_update().contains(&peer) {
                    if bridged.changed().await.is_err() {
                        return;
                    }
                }
                backoff = BACKOFF_BASE;
            }
            Err(e) => {
                tracing::debug!("bridge to {addr}: {e}; retry in {backoff:?}");
                tokio::time::sleep(backoff).await;
                backoff = (backoff * 2).min(BACKOFF_CAP);
                continue;
            }
        }
        tokio::time::sleep(backoff).await;
    }
}
