//! User-space TCP proxy adding a fixed one-way delay in each direction.
//!
//! Every chunk read is released to the other side `delay` after it arrived,
//! so throughput is unaffected while latency grows by the delay. A half-close
//! travels with the same delay; an error on either side drops both sockets.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::{AbortHandle, JoinHandle};
use tokio::time::Instant;

pub struct DelayProxy {
    addr: SocketAddr,
    upstream: SocketAddr,
    delay_us: Arc<AtomicU64>,
    conns: Arc<Mutex<Vec<AbortHandle>>>,
    accept: JoinHandle<()>,
}

impl DelayProxy {
    /// Listens on an ephemeral loopback port and forwards to `upstream`.
    pub async fn start(upstream: SocketAddr, delay: Duration) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let delay_us = Arc::new(AtomicU64::new(delay.as_micros() as u64));
        let conns: Arc<Mutex<Vec<AbortHandle>>> = Arc::default();
        let accept = tokio::spawn({
            let delay_us = delay_us.clone();
            let conns = conns.clone();
            async move {
                loop {
                    let Ok((client, _)) = listener.accept().await else {
                        tokio::time::sleep(Duration::from_millis(10)).await;
                        continue;
                    };
                    let h = tokio::spawn(serve(client, upstream, delay_us.clone()));
                    let mut c = conns.lock().unwrap();
                    c.retain(|h| !h.is_finished());
                    c.push(h.abort_handle());
                }
            }
        });
        Ok(Self {
            addr,
            upstream,
            delay_us,
            conns,
            accept,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn upstream(&self) -> SocketAddr {
        self.upstream
    }

    pub fn delay(&self) -> Duration {
        Duration::from_micros(self.delay_us.load(Ordering::Relaxed))
    }

    /// Applies to bytes read from now on.
    pub fn set_delay(&self, delay: Duration) {
        self.delay_us.store(delay.as_micros() as u64, Ordering::Relaxed);
    }

    /// Drops every open connection; new ones are still accepted.
    pub fn sever(&self) {
        for h in self.conns.lock().unwrap().drain(..) {
            h.abort();
        }
    }

    pub fn connections(&self) -> usize {
        let mut c = self.conns.lock().unwrap();
        c.retain(|h| !h.is_finished());
        c.len()
    }
}

impl Drop for DelayProxy {
    fn drop(&mut self) {
        self.accept.abort();
        self.sever();
    }
}

async fn serve(client: TcpStream, upstream: SocketAddr, delay_us: Arc<AtomicU64>) {
    let Ok(server) = TcpStream::connect(upstream).await else {
        return;
    };
    let _ = client.set_nodelay(true);
    let _ = server.set_nodelay(true);
    let (cr, cw) = client.into_split();
    let (sr, sw) = server.into_split();
    let _ = tokio::try_join!(pipe(cr, sw, delay_us.clone()), pipe(sr, cw, delay_us));
}

async fn pipe(mut r: OwnedReadHalf, mut w: OwnedWriteHalf, delay_us: Arc<AtomicU64>) -> io::Result<()> {
    let (tx, mut rx) = mpsc::unbounded_channel::<(Instant, Option<Vec<u8>>)>();
    let reader = async move {
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            let n = r.read(&mut buf).await?;
            let due = Instant::now() + Duration::from_micros(delay_us.load(Ordering::Relaxed));
            if n == 0 {
                let _ = tx.send((due, None));
                return Ok::<_, io::Error>(());
            }
            if tx.send((due, Some(buf[..n].to_vec()))).is_err() {
                return Ok(());
            }
        }
    };
    let writer = async move {
        while let Some((due, chunk)) = rx.recv().await {
            tokio::time::sleep_until(due).await;
            match chunk {
                Some(c) => w.write_all(&c).await?,
                None => {
                    w.shutdown().await?;
                    return Ok(());
                }
            }
        }
        Ok::<_, io::Error>(())
    };
    tokio::try_join!(reader, writer).map(|_| ())
}
