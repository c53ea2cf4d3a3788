use std::net::Ipv4Addr;
use std::time::Duration;

use spanmq_bench::{run_workload, Target, WorkloadError, WorkloadSpec};
use spanmq_core::broker::{self, BrokerHandle};
use spanmq_core::config::BrokerConfig;

async fn broker() -> BrokerHandle {
    broker::start(BrokerConfig {
        listen_address: Ipv4Addr::LOCALHOST,
        listen_port: 0,
        capability: Some((1, 1)),
        ..BrokerConfig::default()
    })
    .await
    .unwrap()
}

#[tokio::test]
async fn one_publisher_one_subscriber_smoke() {
    let b = broker().await;
    let mut spec = WorkloadSpec::new(vec![Target {
        addr: b.local_addr(),
        publishers: 1,
        subscribers: 1,
    }]);
    spec.duration = Duration::from_millis(500);
    let r = run_workload(&spec).await.unwrap();
    assert!(r.throughput > 0.0);
    assert!(r.published > 0);
    assert!(r.exactly_once(), "{r}");
    assert!(r.delay.unwrap().mean_ms < 50.0, "{r}");
    assert!(r.starved.is_empty());
    b.shutdown().await;
}

#[tokio::test]
async fn deliveries_are_conserved() {
    let b = broker().await;
    let mut spec = WorkloadSpec::new(vec![Target {
        addr: b.local_addr(),
        publishers: 7,
        subscribers: 23,
    }]);
    spec.topic_count = 3;
    spec.duration = Duration::from_secs(30);
    spec.messages_per_publisher = Some(20);
    spec.keep_samples = true;
    let r = run_workload(&spec).await.unwrap();
    assert_eq!(r.published, 140);
    let (pubs, subs) = spec.topic_assignment();
    let mut per_topic = [0u64; 3];
    for t in pubs {
        per_topic[t] += 20;
    }
    let expected: u64 = subs.iter().map(|&t| per_topic[t]).sum();
    assert_eq!(r.expected_deliveries, expected);
    assert_eq!(r.received, expected);
    assert_eq!(r.duplicates, 0);
    assert_eq!(r.samples.len() as u64, expected);
    assert!(r.samples.iter().all(|s| s.received_us >= s.published_us));
    for (i, &got) in r.per_subscriber_received.iter().enumerate() {
        assert_eq!(got, per_topic[subs[i]], "subscriber {i}");
    }
    b.shutdown().await;
}

#[tokio::test]
async fn unreachable_target_aborts() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let spec = WorkloadSpec::new(vec![Target {
        addr: port,
        publishers: 1,
        subscribers: 0,
    }]);
    assert!(matches!(
        run_workload(&spec).await,
        Err(WorkloadError::Unreachable { .. })
    ));
}

#[tokio::test]
async fn idle_run_flags_no_starvation() {
    let b = broker().await;
    let mut spec = WorkloadSpec::new(vec![Target {
        addr: b.local_addr(),
        publishers: 1,
        subscribers: 2,
    }]);
    spec.messages_per_publisher = Some(0);
    let r = run_workload(&spec).await.unwrap();
    assert_eq!(r.published, 0);
    assert!(r.starved.is_empty());
    b.shutdown().await;
}

#[tokio::test]
async fn paced_publishers_hold_their_rate() {
    let b = broker().await;
    let mut spec = WorkloadSpec::new(vec![Target {
        addr: b.local_addr(),
        publishers: 4,
        subscribers: 1,
    }]);
    spec.duration = Duration::from_secs(1);
    spec.rate = Some(25.0);
    let r = run_workload(&spec).await.unwrap();
    // 4 x 25 over one second, with a tick either side
    assert!((92..=108).contains(&r.published), "{r}");
    assert!(r.exactly_once(), "{r}");
    b.shutdown().await;
}
