//! `spanmq-bench`: QoS-2 gated publication throughput and end-to-end delay.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Parser;

use spanmq_bench::report::{append_csv, write_samples};
use spanmq_bench::{run_workload, Target, WorkloadSpec};
use spanmq_core::QoS;

#[derive(Debug, Parser)]
#[command(version, about = "Publishers and subscribers against one or more brokers")]
struct Args {
    /// `host:port,publishers,subscribers`; repeatable, one per broker.
    #[arg(short, long = "target", required = true)]
    targets: Vec<String>,
    #[arg(long, default_value_t = 64)]
    message_size: usize,
    #[arg(long, default_value_t = 10)]
    topics: usize,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=2))]
    qos: u8,
    /// Publishing time in seconds.
    #[arg(short, long, default_value_t = 10.0)]
    duration: f64,
    /// Stop each publisher after this many messages.
    #[arg(long)]
    messages: Option<u64>,
    /// Messages per second per publisher; unpaced when absent.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Scenario label for the CSV row.
    #[arg(long, default_value = "custom")]
    scenario: String,
    /// Broker count for the CSV row; defaults to the number of targets.
    #[arg(long)]
    brokers: Option<usize>,
    /// Output directory for results.csv (appended) and latency samples.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

async fn parse_target(s: &str) -> anyhow::Result<Target> {
    let parts: Vec<&str> = s.split(',').collect();
    let [addr, p, m] = parts[..] else {
        bail!("target {s:?} is not host:port,publishers,subscribers");
    };
    let addr: SocketAddr = tokio::net::lookup_host(addr)
        .await
        .with_context(|| format!("resolving {addr}"))?
        .next()
        .with_context(|| format!("{addr} has no address"))?;
    Ok(Target {
        addr,
        publishers: p.parse().with_context(|| format!("publisher count in {s:?}"))?,
        subscribers: m.parse().with_context(|| format!("subscriber count in {s:?}"))?,
    })
}

async fn run(args: Args) -> anyhow::Result<bool> {
    let mut targets = Vec::new();
    for t in &args.targets {
        targets.push(parse_target(t).await?);
    }
    let mut spec = WorkloadSpec::new(targets);
    spec.scenario = args.scenario;
    spec.brokers = args.brokers.unwrap_or(spec.targets.len());
    spec.message_size = args.message_size;
    spec.topic_count = args.topics;
    spec.qos = QoS::from_u8(args.qos).unwrap_or(QoS::ExactlyOnce);
    spec.duration = Duration::from_secs_f64(args.duration);
    spec.messages_per_publisher = args.messages;
    spec.rate = args.rate;
    spec.seed = args.seed;
    spec.keep_samples = args.out.is_some();
    let report = run_workload(&spec).await?;
    print!("{report}");
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir)?;
        append_csv(&dir.join("results.csv"), &[report.csv_row()])?;
        write_samples(
            &dir.join(format!("latency-{}-seed{}.csv", spec.scenario, spec.seed)),
            &report.samples,
        )?;
    }
    Ok(report.starved.is_empty())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    match rt.block_on(run(args)) {
        Ok(true) => ExitCode::SUCCESS,
        // completed, but some subscriber received nothing
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("spanmq-bench: {e:#}");
            ExitCode::FAILURE
        }
    }
}
