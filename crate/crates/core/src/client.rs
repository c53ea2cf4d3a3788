//! Small async MQTT client: enough for load generation and tests.
//!
//! A background task owns the socket, answers the receiver side of QoS 1/2
//! exchanges on its own and completes each call once its acknowledgement
//! arrives.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::time::Duration;

use bytes::BytesMut;
use futures::StreamExt;
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio_util::codec::FramedRead;

use crate::codec::{
    encode_into, Ack, CodecError, Connect, Disconnect, MqttCodec, Packet, ProtocolVersion, Publish,
    QoS, Subscribe, SubscribeFilter, Will,
};
use crate::qos::{Inbound, InboundDecision};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("connect to {addr}: {source}")]
    Connect {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("connection refused by broker (code {0:#04x})")]
    Refused(u8),
    #[error("no CONNACK within {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("connection closed")]
    Closed,
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub client_id: String,
    pub version: ProtocolVersion,
    pub keep_alive: u16,
    pub will: Option<Will>,
}

impl ClientOptions {
    pub fn new(client_id: impl Into<String>) -> Self {
        Self {
            client_id: client_id.into(),
            version: ProtocolVersion::V311,
            keep_alive: 60,
            will: None,
        }
    }

    pub fn with_will(mut self, will: Will) -> Self {
        self.will = Some(will);
        self
    }

    pub fn with_keep_alive(mut self, seconds: u16) -> Self {
        self.keep_alive = seconds;
        self
    }

    pub fn with_version(mut self, version: ProtocolVersion) -> Self {
        self.version = version;
        self
    }
}

enum Cmd {
    Publish(Publish, oneshot::Sender<Result<(), ClientError>>),
    Subscribe(Vec<SubscribeFilter>, oneshot::Sender<Result<Vec<u8>, ClientError>>),
    Disconnect(oneshot::Sender<()>),
}

enum Pending {
    Publish(QoS, oneshot::Sender<Result<(), ClientError>>),
    Subscribe(oneshot::Sender<Result<Vec<u8>, ClientError>>),
}

pub struct MqttClient {
    cmds: mpsc::UnboundedSender<Cmd>,
    incoming: mpsc::UnboundedReceiver<Publish>,
    task: JoinHandle<()>,
}

const CONNACK_TIMEOUT: Duration = Duration::from_secs(10);

impl MqttClient {
    pub async fn connect(addr: SocketAddr, opts: ClientOptions) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)
            .await
            .map_err(|source| ClientError::Connect { addr, source })?;
        let _ = stream.set_nodelay(true);
        let (read, mut write) = stream.into_split();
        let mut connect = Connect::new(opts.version, opts.client_id, opts.keep_alive);
        connect.will = opts.will;
        let mut buf = BytesMut::new();
        encode_into(&Packet::Connect(connect), opts.version, &mut buf)?;
        write
            .write_all(&buf)
            .await
            .map_err(|source| ClientError::Connect { addr, source })?;
        let mut framed = FramedRead::new(read, MqttCodec::new(opts.version));
        match tokio::time::timeout(CONNACK_TIMEOUT, framed.next()).await {
            Err(_) => return Err(ClientError::Timeout(CONNACK_TIMEOUT)),
            Ok(None) => return Err(ClientError::Closed),
            Ok(Some(Err(e))) => return Err(e.into()),
            Ok(Some(Ok(Packet::Connack(ack)))) if ack.code == 0 => {}
            Ok(Some(Ok(Packet::Connack(ack)))) => return Err(ClientError::Refused(ack.code)),
            Ok(Some(Ok(other))) => {
                return Err(ClientError::Protocol(format!(
                    "expected CONNACK, got {:?}",
                    other.packet_type()
                )))
            }
        }
        let (cmds, cmd_rx) = mpsc::unbounded_channel();
        let (in_tx, incoming) = mpsc::unbounded_channel();
        let ping_every = (opts.keep_alive > 0).then(|| Duration::from_secs(opts.keep_alive.into()) / 2);
        let task = tokio::spawn(run(framed, write, opts.version, cmd_rx, in_tx, ping_every));
        Ok(Self {
            cmds,
            incoming,
            task,
        })
    }

    /// Publishes and waits for the exchange to finish: immediately for QoS 0,
    /// PUBACK for QoS 1, PUBCOMP for QoS 2.
    pub async fn publish(&self, publish: Publish) -> Result<(), ClientError> {
        let (tx, rx) = oneshot::channel();
        self.cmds
            .send(Cmd::Publish(publish, tx))
            .map_err(|_| ClientError::Closed)?;
        rx.await.map_err(|_| ClientError::Closed)?
    }

    /// Subscribes and returns the SUBACK return codes.
    pub async fn subscribe(&self, filters: Vec<SubscribeFilter>) -> Result<Vec<u8>, ClientError> {
        let (tx, rx) = oneshot::channel();
        self.cmds
            .send(Cmd::Subscribe(filters, tx))
            .map_err(|_| ClientError::Closed)?;
        rx.await.map_err(|_| ClientError::Closed)?
    }

    pub async fn subscribe_one(&self, filter: &str, qos: QoS) -> Result<u8, ClientError> {
        let codes = self.subscribe(vec![SubscribeFilter::new(filter, qos)]).await?;
        codes
            .first()
            .copied()
            .ok_or_else(|| ClientError::Protocol("empty SUBACK".into()))
    }

    /// Next application message; `None` once the connection is gone.
    pub async fn recv(&mut self) -> Option<Publish> {
        self.incoming.recv().await
    }

    pub fn try_recv(&mut self) -> Option<Publish> {
        self.incoming.try_recv().ok()
    }

    /// Sends DISCONNECT and closes the socket.
    pub async fn disconnect(self) {
        let (tx, rx) = oneshot::channel();
        if self.cmds.send(Cmd::Disconnect(tx)).is_ok() {
            let _ = rx.await;
        }
        let _ = self.task.await;
    }

    /// Drops the socket without DISCONNECT, as a crashed client would.
    pub fn abort(self) {
        self.task.abort();
    }
}

async fn run(
    mut framed: FramedRead<tokio::net::tcp::OwnedReadHalf, MqttCodec>,
    mut write: tokio::net::tcp::OwnedWriteHalf,
    version: ProtocolVersion,
    mut cmds: mpsc::UnboundedReceiver<Cmd>,
    incoming: mpsc::UnboundedSender<Publish>,
    ping_every: Option<Duration>,
) {
    let mut next_id: u16 = 0;
    let mut pending: HashMap<u16, Pending> = HashMap::new();
    let mut inbound = Inbound::new();
    let mut buf = BytesMut::new();
    let mut ping = tokio::time::interval(ping_every.unwrap_or(Duration::from_secs(3600)));
    ping.tick().await;
    let mut alloc = |pending: &HashMap<u16, Pending>| loop {
        next_id = next_id.wrapping_add(1);
        if next_id != 0 && !pending.contains_key(&next_id) {
            return next_id;
        }
    };
    loop {
        buf.clear();
        tokio::select! {
            cmd = cmds.recv() => match cmd {
                None => return,
                Some(Cmd::Publish(mut p, done)) => {
                    if p.qos == QoS::AtMostOnce {
                        p.packet_id = None;
                        let _ = done.send(encode_into(&Packet::Publish(p), version, &mut buf).map_err(Into::into));
                    } else {
                        let id = alloc(&pending);
                        p.packet_id = Some(id);
                        if let Err(e) = encode_into(&Packet::Publish(p.clone()), version, &mut buf) {
                            let _ = done.send(Err(e.into()));
                        } else {
                            pending.insert(id, Pending::Publish(p.qos, done));
                        }
                    }
                }
                Some(Cmd::Subscribe(filters, done)) => {
                    let id = alloc(&pending);
                    let s = Subscribe { packet_id: id, filters, properties: Default::default() };
                    if let Err(e) = encode_into(&Packet::Subscribe(s), version, &mut buf) {
                        let _ = done.send(Err(e.into()));
                    } else {
                        pending.insert(id, Pending::Subscribe(done));
                    }
                }
                Some(Cmd::Disconnect(done)) => {
                    let _ = encode_into(&Packet::Disconnect(Disconnect::default()), version, &mut buf);
                    let _ = write.write_all(&buf).await;
                    let _ = write.shutdown().await;
                    let _ = done.send(());
                    return;
                }
            },
            packet = framed.next() => {
                let packet = match packet {
                    Some(Ok(p)) => p,
                    _ => return,
                };
                let reply = match packet {
                    Packet::Publish(p) => match (p.qos, p.packet_id) {
                        (QoS::AtMostOnce, _) => {
                            let _ = incoming.send(p);
                            None
                        }
                        (QoS::AtLeastOnce, Some(id)) => {
                            let _ = incoming.send(p);
                            Some(Packet::Puback(Ack::new(id)))
                        }
                        (QoS::ExactlyOnce, Some(id)) => {
                            if inbound.on_publish(id) == InboundDecision::Deliver {
                                let _ = incoming.send(p);
                            }
                            Some(Packet::Pubrec(Ack::new(id)))
                        }
                        _ => return,
                    },
                    Packet::Pubrel(a) => {
                        let _ = inbound.on_pubrel(a.packet_id);
                        Some(Packet::Pubcomp(Ack::new(a.packet_id)))
                    }
                    Packet::Puback(a) | Packet::Pubcomp(a) => {
                        if let Some(Pending::Publish(_, done)) = pending.remove(&a.packet_id) {
                            let _ = done.send(Ok(()));
                        }
                        None
                    }
                    Packet::Pubrec(a) => match pending.get(&a.packet_id) {
                        Some(Pending::Publish(QoS::ExactlyOnce, _)) => {
                            Some(Packet::Pubrel(Ack::new(a.packet_id)))
                        }
                        _ => None,
                    },
                    Packet::Suback(s) => {
                        if let Some(Pending::Subscribe(done)) = pending.remove(&s.packet_id) {
                            let _ = done.send(Ok(s.codes));
                        }
                        None
                    }
                    Packet::Pingreq(_) => Some(Packet::Pingresp),
                    _ => None,
                };
                if let Some(r) = reply {
                    let _ = encode_into(&r, version, &mut buf);
                }
            }
            _ = ping.tick(), if ping_every.is_some() => {
                let _ = encode_into(&Packet::Pingreq(None), version, &mut buf);
            }
        }
        if !buf.is_empty() && write.write_all(&buf).await.is_err() {
            return;
        }
    }
}
