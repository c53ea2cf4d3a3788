use std::collections::HashSet;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::{BufMut, Bytes, BytesMut};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use spanmq_core::client::{ClientError, ClientOptions, MqttClient};
use spanmq_core::codec::{Publish, QoS};

use crate::report::WorkloadReport;
use crate::stats::DelayStats;

/// Timestamp, publisher index and sequence number.
pub const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub addr: SocketAddr,
    pub publishers: usize,
    pub subscribers: usize,
}

#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    /// Label copied into the CSV row.
    pub scenario: String,
    /// Number of brokers in the deployment, for the CSV row only.
    pub brokers: usize,
    pub targets: Vec<Target>,
    /// Payload size in bytes; never below [`HEADER_LEN`].
    pub message_size: usize,
    pub topic_count: usize,
    pub qos: QoS,
    pub duration: Duration,
    /// Per-publisher cap; `None` publishes until `duration` runs out.
    pub messages_per_publisher: Option<u64>,
    /// Per-publisher publish rate in messages per second; `None` publishes
    /// back to back.
    pub rate: Option<f64>,
    pub seed: u64,
    pub topic_prefix: String,
    /// Subscribers give up after this long without a message once
    /// publishing is over.
    pub drain_timeout: Duration,
    pub keep_samples: bool,
}

impl WorkloadSpec {
    pub fn new(targets: Vec<Target>) -> Self {
        Self {
            scenario: "custom".into(),
            brokers: targets.len(),
            targets,
            message_size: 64,
            topic_count: 10,
            qos: QoS::ExactlyOnce,
            duration: Duration::from_secs(10),
            messages_per_publisher: None,
            rate: None,
            seed: 1,
            topic_prefix: "bench".into(),
            drain_timeout: Duration::from_secs(5),
            keep_samples: false,
        }
    }

    pub fn publishers(&self) -> usize {
        self.targets.iter().map(|t| t.publishers).sum()
    }

    pub fn subscribers(&self) -> usize {
        self.targets.iter().map(|t| t.subscribers).sum()
    }

    /// Number of distinct topics actually published to.
    pub fn active_topics(&self) -> usize {
        self.topic_count.min(self.publishers()).max(1)
    }

    /// Topic index of every publisher, then of every subscriber, in target
    /// order. Publishers are spread evenly over the active topics in a
    /// seeded order; subscribers likewise, so every topic with a publisher
    /// also has subscribers once M reaches the topic count.
    pub fn topic_assignment(&self) -> (Vec<usize>, Vec<usize>) {
        let topics = self.active_topics();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut spread = |n: usize| {
            let mut v: Vec<usize> = (0..n).map(|i| i % topics).collect();
            v.shuffle(&mut rng);
            v
        };
        let pubs = spread(self.publishers());
        let subs = spread(self.subscribers());
        (pubs, subs)
    }

    pub fn topic_name(&self, index: usize) -> String {
        format!("{}/{index}", self.topic_prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub published_us: u64,
    pub received_us: u64,
    pub delta_ms: f64,
    pub topic: usize,
    pub publisher: u32,
    pub subscriber: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("workload has no publishers")]
    NoPublishers,
    #[error("topic count must be positive")]
    NoTopics,
    #[error("cannot reach {addr}: {source}")]
    Unreachable { addr: SocketAddr, source: ClientError },
    #[error("subscribe on {addr} refused: {source}")]
    Subscribe { addr: SocketAddr, source: ClientError },
}

pub fn encode_payload(size: usize, publisher: u32, seq: u64, now_us: u64) -> Bytes {
    let mut b = BytesMut::with_capacity(size.max(HEADER_LEN));
    b.put_u64(now_us);
    b.put_u32(publisher);
    b.put_u64(seq);
    b.resize(size.max(HEADER_LEN), 0);
    b.freeze()
}

/// `(timestamp, publisher, seq)`, or `None` for a foreign payload.
pub fn decode_payload(p: &[u8]) -> Option<(u64, u32, u64)> {
    if p.len() < HEADER_LEN {
        return None;
    }
    let ts = u64::from_be_bytes(p[0..8].try_into().ok()?);
    let publisher = u32::from_be_bytes(p[8..12].try_into().ok()?);
    let seq = u64::from_be_bytes(p[12..20].try_into().ok()?);
    Some((ts, publisher, seq))
}

struct PubResult {
    target: usize,
    topic: usize,
    published: u64,
    elapsed: Duration,
    error: Option<String>,
}

struct SubResult {
    received: u64,
    duplicates: u64,
    deltas_us: Vec<u64>,
    samples: Vec<LatencySample>,
}

/// Runs the workload to completion and returns its measurements.
pub async fn run_workload(spec: &WorkloadSpec) -> Result<WorkloadReport, WorkloadError> {
    if spec.publishers() == 0 {
        return Err(WorkloadError::NoPublishers);
    }
    if spec.topic_count == 0 {
        return Err(WorkloadError::NoTopics);
    }
    let (pub_topics, sub_topics) = spec.topic_assignment();
    let clock = Instant::now();
    let tag = format!("{}-{}", std::process::id(), spec.seed);

    // per-topic published totals, known once publishing stops
    let (expected_tx, expected_rx) = watch::channel::<Option<Arc<Vec<u64>>>>(None);

    let mut subs = Vec::new();
    let mut idx = 0usize;
    for t in &spec.targets {
        for _ in 0..t.subscribers {
            let client = connect(t.addr, format!("bench-{tag}-s{idx}")).await?;
            let topic = sub_topics[idx];
            client
                .subscribe_one(&spec.topic_name(topic), spec.qos)
                .await
                .map_err(|source| WorkloadError::Subscribe { addr: t.addr, source })?;
            subs.push(tokio::spawn(subscriber(
                client,
                idx as u32,
                topic,
                expected_rx.clone(),
                spec.drain_timeout,
                clock,
                spec.keep_samples,
            )));
            idx += 1;
        }
    }

    let (start_tx, start_rx) = watch::channel(false);
    let mut pubs = Vec::new();
    let mut idx = 0usize;
    for (ti, t) in spec.targets.iter().enumerate() {
        for _ in 0..t.publishers {
            let client = connect(t.addr, format!("bench-{tag}-p{idx}")).await?;
            let topic = pub_topics[idx];
            pubs.push(tokio::spawn(publisher(
                client,
                PubParams {
                    index: idx as u32,
                    target: ti,
                    topic,
                    topic_name: spec.topic_name(topic),
                    size: spec.message_size,
                    qos: spec.qos,
                    duration: spec.duration,
                    cap: spec.messages_per_publisher,
                    // stagger publishers across one period
                    pacing: spec.rate.filter(|r| *r > 0.0).map(|r| {
                        let period = Duration::from_secs_f64(1.0 / r);
                        (period, period.mul_f64(idx as f64 / spec.publishers() as f64))
                    }),
                },
                start_rx.clone(),
                clock,
            )));
            idx += 1;
        }
    }
    let _ = start_tx.send(true);

    let mut pub_results = Vec::new();
    for p in pubs {
        if let Ok(r) = p.await {
            pub_results.push(r);
        }
    }
    let mut per_topic = vec![0u64; spec.active_topics()];
    for r in &pub_results {
        per_topic[r.topic] += r.published;
    }
    let _ = expected_tx.send(Some(Arc::new(per_topic.clone())));

    let mut sub_results = Vec::new();
    for s in subs {
        sub_results.push(s.await.unwrap_or(SubResult {
            received: 0,
            duplicates: 0,
            deltas_us: Vec::new(),
            samples: Vec::new(),
        }));
    }

    Ok(summarize(spec, &pub_results, sub_results, &per_topic, &sub_topics))
}

fn summarize(
    spec: &WorkloadSpec,
    pubs: &[PubResult],
    subs: Vec<SubResult>,
    per_topic: &[u64],
    sub_topics: &[usize],
) -> WorkloadReport {
    let published: u64 = pubs.iter().map(|r| r.published).sum();
    let elapsed = pubs.iter().map(|r| r.elapsed).max().unwrap_or_default();
    let rate = |n: u64, d: Duration| {
        if d.is_zero() {
            0.0
        } else {
            n as f64 / d.as_secs_f64()
        }
    };
    let per_publisher: Vec<f64> = pubs.iter().map(|r| rate(r.published, r.elapsed)).collect();
    let mut per_target = vec![0.0; spec.targets.len()];
    for (r, t) in pubs.iter().zip(&per_publisher) {
        per_target[r.target] += t;
    }
    let expected: u64 = sub_topics.iter().map(|&t| per_topic[t]).sum();
    let received: u64 = subs.iter().map(|s| s.received).sum();
    let duplicates: u64 = subs.iter().map(|s| s.duplicates).sum();
    let starved: Vec<usize> = subs
        .iter()
        .enumerate()
        .filter(|(i, s)| s.received == 0 && per_topic[sub_topics[*i]] > 0)
        .map(|(i, _)| i)
        .collect();
    let mut deltas = Vec::with_capacity(received as usize);
    let mut samples = Vec::new();
    let mut per_subscriber = Vec::with_capacity(subs.len());
    for s in subs {
        per_subscriber.push(s.received);
        deltas.extend_from_slice(&s.deltas_us);
        samples.extend(s.samples);
    }
    WorkloadReport {
        scenario: spec.scenario.clone(),
        brokers: spec.brokers,
        publishers: spec.publishers(),
        subscribers: spec.subscribers(),
        message_size: spec.message_size.max(HEADER_LEN),
        qos: spec.qos as u8,
        published,
        publish_seconds: elapsed.as_secs_f64(),
        throughput: rate(published, elapsed),
        per_publisher_throughput: per_publisher,
        per_target_throughput: per_target,
        expected_deliveries: expected,
        received,
        per_subscriber_received: per_subscriber,
        duplicates,
        delay: DelayStats::from_micros(&deltas),
        starved,
        publisher_errors: pubs.iter().filter_map(|r| r.error.clone()).collect(),
        samples,
    }
}

async fn connect(addr: SocketAddr, id: String) -> Result<MqttClient, WorkloadError> {
    MqttClient::connect(addr, ClientOptions::new(id))
        .await
        .map_err(|source| WorkloadError::Unreachable { addr, source })
}

struct PubParams {
    index: u32,
    target: usize,
    topic: usize,
    topic_name: String,
    size: usize,
    qos: QoS,
    duration: Duration,
    cap: Option<u64>,
    /// (period, offset of the first publish)
    pacing: Option<(Duration, Duration)>,
}

async fn publisher(
    client: MqttClient,
    p: PubParams,
    mut start: watch::Receiver<bool>,
    clock: Instant,
) -> PubResult {
    let _ = start.wait_for(|s| *s).await;
    let began = Instant::now();
    let deadline = began + p.duration;
    let mut seq = 0u64;
    let mut error = None;
    let mut ticks = p.pacing.map(|(period, offset)| {
        let mut t = tokio::time::interval_at((began + offset).into(), period);
        t.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        t
    });
    while Instant::now() < deadline && p.cap.is_none_or(|c| seq < c) {
        if let Some(t) = ticks.as_mut() {
            t.tick().await;
            if Instant::now() >= deadline {
                break;
            }
        }
        let now_us = clock.elapsed().as_micros() as u64;
        let payload = encode_payload(p.size, p.index, seq, now_us);
        match client.publish(Publish::new(p.topic_name.clone(), payload, p.qos)).await {
            Ok(()) => seq += 1,
            Err(e) => {
                error = Some(format!("publisher {}: {e}", p.index));
                break;
            }
        }
    }
    let elapsed = began.elapsed();
    client.disconnect().await;
    PubResult {
        target: p.target,
        topic: p.topic,
        published: seq,
        elapsed,
        error,
    }
}

async fn subscriber(
    mut client: MqttClient,
    index: u32,
    topic: usize,
    mut expected: watch::Receiver<Option<Arc<Vec<u64>>>>,
    drain_timeout: Duration,
    clock: Instant,
    keep_samples: bool,
) -> SubResult {
    let mut seen = HashSet::new();
    let mut r = SubResult {
        received: 0,
        duplicates: 0,
        deltas_us: Vec::new(),
        samples: Vec::new(),
    };
    loop {
        let target = expected.borrow().as_ref().map(|v| v[topic]);
        if target.is_some_and(|t| r.received >= t) {
            break;
        }
        tokio::select! {
            m = client.recv() => {
                let Some(m) = m else { break };
                let now = clock.elapsed().as_micros() as u64;
                let Some((ts, publisher, seq)) = decode_payload(&m.payload) else { continue };
                if !seen.insert((publisher, seq)) {
                    r.duplicates += 1;
                    continue;
                }
                r.received += 1;
                let delta = now.saturating_sub(ts);
                r.deltas_us.push(delta);
                if keep_samples {
                    r.samples.push(LatencySample {
                        published_us: ts,
                        received_us: now,
                        delta_ms: delta as f64 / 1000.0,
                        topic,
                        publisher,
                        subscriber: index,
                    });
                }
            }
            _ = expected.changed(), if target.is_none() => {}
            _ = tokio::time::sleep(drain_timeout), if target.is_some() => break,
        }
    }
    client.disconnect().await;
    r
}
