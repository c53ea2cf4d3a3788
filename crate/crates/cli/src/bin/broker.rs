//! `spanmq-broker`: one federating MQTT broker.

use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use spanmq_core::broker;
use spanmq_core::config::BrokerConfig;

/// MQTT broker that bridges to its peers over a self-organising spanning tree.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// `key value` configuration file; the flags below override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen_address: Option<Ipv4Addr>,
    #[arg(short = 'p', long)]
    listen_port: Option<u16>,
    /// Address advertised in this broker's id.
    #[arg(long)]
    advertise_address: Option<Ipv4Addr>,
    /// Peer broker `host:port`; repeatable, added to the file's peers.
    #[arg(long = "peer")]
    peers: Vec<String>,
    /// Keep Alive in seconds; HELLO is half of it.
    #[arg(short, long)]
    keep_alive: Option<u16>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Fixed CPU MHz and RAM MB instead of reading /proc.
    #[arg(long, num_args = 2, value_names = ["CPU_MHZ", "RAM_MB"])]
    capability: Option<Vec<u64>>,
    #[arg(long)]
    status_file: Option<PathBuf>,
    #[arg(long)]
    event_log: Option<PathBuf>,
}

impl Args {
    fn into_config(self) -> anyhow::Result<BrokerConfig> {
        let mut cfg = match &self.config {
            Some(p) => BrokerConfig::load(p)?,
            None => BrokerConfig::default(),
        };
        if let Some(v) = self.listen_address {
            cfg.listen_address = v;
        }
        if let Some(v) = self.listen_port {
            cfg.listen_port = v;
        }
        if let Some(v) = self.advertise_address {
            cfg.advertise_address = Some(v);
        }
        cfg.peers.extend(self.peers);
        if let Some(v) = self.keep_alive {
            cfg.keep_alive = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(c) = self.capability {
            cfg.capability = Some((c[0], c[1]));
        }
        if let Some(v) = self.status_file {
            cfg.status_file = Some(v);
        }
        if let Some(v) = self.event_log {
            cfg.event_log = Some(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

async fn terminated() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

async fn run(args: Args) -> anyhow::Result<()> {
    let cfg = args.into_config()?;
    let handle = broker::start(cfg).await.context("starting broker")?;
    tracing::info!("broker {} ready", handle.id());
    terminated().await;
    tracing::info!("shutting down");
    handle.shutdown().await;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    match rt.block_on(run(args)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spanmq-broker: {e:#}");
            ExitCode::FAILURE
        }
    }
}
