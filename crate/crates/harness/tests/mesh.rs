use std::time::Duration;

use spanmq_core::client::{ClientOptions, MqttClient};
use spanmq_core::codec::{Publish, QoS};
use spanmq_harness::scenario::verify_report_dir;
use spanmq_harness::{run_scenario, Launcher, Mesh, Outcome, RunOptions, TopologySpec};

const TRIANGLE: &str = "
name triangle
keep_alive 2
broker a cpu=3000 ram=0
broker b cpu=2000 ram=0
broker c cpu=1000 ram=0
link a b 5
link b c 5
link a c 20
scenario distributed
publishers 3
subscribers 6
topics 3
duration 1
";

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn distributed_triangle_matches_oracle_and_replicates_once() {
    let dir = tempfile::tempdir().unwrap();
    let spec: TopologySpec = TRIANGLE.parse().unwrap();
    let opts = RunOptions::new(Launcher::InProcess, dir.path());
    let r = run_scenario(&spec, &opts).await.unwrap();
    assert!(r.passed(), "{}", r.summary());
    let c = &r.checks[0];
    assert_eq!(c.root.as_deref(), Some("a"));
    // c reaches a through b (20 ms RTT) rather than directly (40 ms)
    assert_eq!(c.edges, vec!["a-b", "b-c"]);
    let w = &r.workloads[0];
    assert!(w.exactly_once());
    assert_eq!(r.forwards_per_message[0], Some(2.0));
    assert!(r.bpdu_bytes > 0);
    for f in ["report.json", "results.csv", "tree.csv", "timeline.csv", "summary.txt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let again = verify_report_dir(dir.path()).unwrap();
    assert_eq!(again, r.checks);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn killing_the_root_reelects_and_restore_rejoins() {
    let dir = tempfile::tempdir().unwrap();
    let spec: TopologySpec = TRIANGLE.parse().unwrap();
    let mut mesh = Mesh::launch(&spec, Launcher::InProcess, dir.path()).await.unwrap();
    let (c0, _) = mesh.settle_and_verify("boot", Duration::from_secs(30)).await.unwrap();
    assert_eq!(c0.outcome, Outcome::Pass, "{c0}");

    mesh.kill("a").await.unwrap();
    let (c1, input) = mesh.settle_and_verify("after kill", Duration::from_secs(30)).await.unwrap();
    assert_eq!(c1.outcome, Outcome::Pass, "{c1}");
    assert_eq!(c1.root.as_deref(), Some("b"));
    assert_eq!(c1.edges, vec!["b-c"]);
    assert_eq!(input.brokers.len(), 2);
    let tc: u64 = mesh.statuses().values().map(|s| s.counters.tc_bpdu_sent).sum();
    assert!(tc > 0);

    // exactly-once across the survivors
    let mut sub = MqttClient::connect(mesh.addr("c").unwrap(), ClientOptions::new("s")).await.unwrap();
    sub.subscribe_one("t", QoS::ExactlyOnce).await.unwrap();
    let publ = MqttClient::connect(mesh.addr("b").unwrap(), ClientOptions::new("p")).await.unwrap();
    for i in 0..20u8 {
        publ.publish(Publish::new("t", vec![i], QoS::ExactlyOnce)).await.unwrap();
    }
    for i in 0..20u8 {
        let m = tokio::time::timeout(Duration::from_secs(5), sub.recv()).await.unwrap().unwrap();
        assert_eq!(m.payload.as_ref(), &[i]);
    }
    assert!(tokio::time::timeout(Duration::from_millis(300), sub.recv()).await.is_err());

    mesh.restore("a").await.unwrap();
    let (c2, _) = mesh.settle_and_verify("after restore", Duration::from_secs(60)).await.unwrap();
    assert_eq!(c2.outcome, Outcome::Pass, "{c2}");
    assert_eq!(c2.root.as_deref(), Some("a"));
    mesh.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn benchmark_has_no_forwarding() {
    let dir = tempfile::tempdir().unwrap();
    let spec: TopologySpec = "broker solo\nscenario benchmark\nkeep_alive 2\npublishers 2\nsubscribers 2\nduration 0.5\n"
        .parse()
        .unwrap();
    let r = run_scenario(&spec, &RunOptions::new(Launcher::InProcess, dir.path()))
        .await
        .unwrap();
    assert!(r.passed(), "{}", r.summary());
    assert_eq!(r.forwards_per_message[0], Some(0.0));
    assert_eq!(r.checks[0].edges, Vec::<String>::new());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn centralized_clients_pay_the_site_delay() {
    let dir = tempfile::tempdir().unwrap();
    let spec: TopologySpec = "
        keep_alive 2
        broker x
        broker y
        link x y 30
        scenario centralized y
        place publishers x 1
        place subscribers x 1
        duration 1
    "
    .parse()
    .unwrap();
    let r = run_scenario(&spec, &RunOptions::new(Launcher::InProcess, dir.path()))
        .await
        .unwrap();
    assert!(r.passed(), "{}", r.summary());
    let d = r.workloads[0].delay.unwrap();
    // publisher to y and y back to the subscriber: two 30 ms legs
    assert!(d.mean_ms >= 60.0 && d.mean_ms < 90.0, "{d:?}");
}
