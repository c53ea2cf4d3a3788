use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stats::DelayStats;
use crate::workload::LatencySample;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub scenario: String,
    pub brokers: usize,
    pub publishers: usize,
    pub subscribers: usize,
    pub message_size: usize,
    pub qos: u8,
    pub published: u64,
    pub publish_seconds: f64,
    /// Aggregate publications per second over the publishing phase.
    pub throughput: f64,
    pub per_publisher_throughput: Vec<f64>,
    /// Sum of per-publisher rates, by target broker.
    pub per_target_throughput: Vec<f64>,
    /// Publications times matching subscribers.
    pub expected_deliveries: u64,
    pub received: u64,
    pub per_subscriber_received: Vec<u64>,
    pub duplicates: u64,
    pub delay: Option<DelayStats>,
    /// Subscribers that got nothing although their topic was published to.
    pub starved: Vec<usize>,
    pub publisher_errors: Vec<String>,
    #[serde(skip)]
    pub samples: Vec<LatencySample>,
}

impl WorkloadReport {
    /// Every publication reached every matching subscriber once.
    pub fn exactly_once(&self) -> bool {
        self.received == self.expected_deliveries && self.duplicates == 0
    }

    pub fn qos_is_exactly_once(&self) -> bool {
        self.qos == 2
    }

    pub fn csv_row(&self) -> CsvRow {
        let d = self.delay;
        CsvRow {
            scenario: self.scenario.clone(),
            n: self.publishers,
            m: self.subscribers,
            k: self.brokers,
            throughput: self.throughput,
            mean_ms: d.map(|d| d.mean_ms),
            p50_ms: d.map(|d| d.p50_ms),
            p95_ms: d.map(|d| d.p95_ms),
            published: self.published,
            received: self.received,
            expected: self.expected_deliveries,
            duplicates: self.duplicates,
            starved: self.starved.len(),
        }
    }
}

impl fmt::Display for WorkloadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: N={} M={} K={} size={}B",
            self.scenario, self.publishers, self.subscribers, self.brokers, self.message_size
        )?;
        writeln!(
            f,
            "  published {} in {:.2}s, throughput {:.1} msg/s",
            self.published, self.publish_seconds, self.throughput
        )?;
        writeln!(
            f,
            "  received {}/{} (duplicates {})",
            self.received, self.expected_deliveries, self.duplicates
        )?;
        match &self.delay {
            Some(d) => writeln!(
                f,
                "  delay mean {:.2} ms, p50 {:.2} ms, p95 {:.2} ms, max {:.2} ms",
                d.mean_ms, d.p50_ms, d.p95_ms, d.max_ms
            )?,
            None => writeln!(f, "  no delay samples")?,
        }
        if !self.starved.is_empty() {
            writeln!(f, "  STARVED subscribers: {:?}", self.starved)?;
        }
        for e in &self.publisher_errors {
            writeln!(f, "  error: {e}")?;
        }
        Ok(())
    }
}

/// One measurement row of the result CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scenario: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub throughput: f64,
    pub mean_ms: Option<f64>,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub published: u64,
    pub received: u64,
    pub expected: u64,
    pub duplicates: u64,
    pub starved: usize,
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_csv(path: &Path, rows: &[CsvRow]) -> Result<(), csv::Error> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

pub fn write_samples(path: &Path, samples: &[LatencySample]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: &str) -> CsvRow {
        CsvRow {
            scenario: s.into(),
            n: 1,
            m: 2,
            k: 3,
            throughput: 10.5,
            mean_ms: Some(1.0),
            p50_ms: None,
            p95_ms: Some(2.0),
            published: 4,
            received: 8,
            expected: 8,
            duplicates: 0,
            starved: 0,
        }
    }

    #[test]
    fn csv_round_trip_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&path, &[row("a")]).unwrap();
        append_csv(&path, &[row("b")]).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, vec![row("a"), row("b")]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("scenario,N,M,K,throughput,mean_ms,p50_ms,p95_ms"));
        assert_eq!(text.lines().count(), 3);
    }
}
