//! Per-interval bridge traffic merged from every broker's event log.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use spanmq_core::broker::status::read_log;
use spanmq_core::broker::{LogEvent, LogLine};

use crate::mesh::Mark;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    /// Bucket start, seconds since the run began.
    pub t_s: f64,
    pub bpdu_bytes: u64,
    pub bpdu_packets: u64,
    pub publish_bytes: u64,
    pub publish_packets: u64,
    pub other_bytes: u64,
    pub tc_sent: u64,
    pub link_downs: u64,
    pub role_changes: u64,
    /// Harness marks falling in this bucket.
    pub marks: String,
}

pub fn load_logs(paths: &[PathBuf]) -> Vec<LogLine> {
    let mut lines: Vec<LogLine> = paths.iter().filter_map(|p| read_log(p).ok()).flatten().collect();
    lines.sort_by_key(|l| l.t_ms);
    lines
}

pub fn build_timeline(lines: &[LogLine], marks: &[Mark], t0_ms: u64, bucket_ms: u64) -> Vec<TimelineRow> {
    let bucket_ms = bucket_ms.max(1);
    let last = lines
        .iter()
        .map(|l| l.t_ms)
        .chain(marks.iter().map(|m| m.t_ms))
        .max()
        .unwrap_or(t0_ms);
    let n = (last.saturating_sub(t0_ms) / bucket_ms + 1) as usize;
    let mut rows: Vec<TimelineRow> = (0..n)
        .map(|i| TimelineRow {
            t_s: (i as u64 * bucket_ms) as f64 / 1000.0,
            ..Default::default()
        })
        .collect();
    let slot = |t: u64| (t.saturating_sub(t0_ms) / bucket_ms) as usize;
    for l in lines {
        let r = &mut rows[slot(l.t_ms).min(n - 1)];
        match &l.event {
            LogEvent::Traffic(s) => {
                r.bpdu_bytes += s.bpdu_bytes;
                r.bpdu_packets += s.bpdu_packets;
                r.publish_bytes += s.publish_bytes;
                r.publish_packets += s.publish_packets;
                r.other_bytes += s.other_bytes;
            }
            LogEvent::TcSent { .. } => r.tc_sent += 1,
            LogEvent::LinkDown { .. } => r.link_downs += 1,
            LogEvent::Roles { .. } => r.role_changes += 1,
            _ => {}
        }
    }
    for m in marks {
        let r = &mut rows[slot(m.t_ms).min(n - 1)];
        if !r.marks.is_empty() {
            r.marks.push_str("; ");
        }
        r.marks.push_str(&m.label);
    }
    rows
}

pub fn write_timeline(path: &Path, rows: &[TimelineRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Totals over the rows whose start lies in `[from_s, to_s)`.
pub fn window(rows: &[TimelineRow], from_s: f64, to_s: f64) -> TimelineRow {
    let mut acc = TimelineRow {
        t_s: from_s,
        ..Default::default()
    };
    for r in rows.iter().filter(|r| r.t_s >= from_s && r.t_s < to_s) {
        acc.bpdu_bytes += r.bpdu_bytes;
        acc.bpdu_packets += r.bpdu_packets;
        acc.publish_bytes += r.publish_bytes;
        acc.publish_packets += r.publish_packets;
        acc.other_bytes += r.other_bytes;
        acc.tc_sent += r.tc_sent;
        acc.link_downs += r.link_downs;
        acc.role_changes += r.role_changes;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use spanmq_core::broker::TrafficSample;
    use spanmq_core::BrokerId;

    fn line(t_ms: u64, event: LogEvent) -> LogLine {
        LogLine {
            t_ms,
            broker: "127.0.0.1:1".parse::<BrokerId>().unwrap(),
            event,
        }
    }

    #[test]
    fn buckets_sum_traffic_and_place_marks() {
        let id: BrokerId = "127.0.0.1:2".parse().unwrap();
        let lines = vec![
            line(1_000, LogEvent::Traffic(TrafficSample { bpdu_bytes: 38, bpdu_packets: 1, ..Default::default() })),
            line(1_400, LogEvent::Traffic(TrafficSample { bpdu_bytes: 38, bpdu_packets: 1, ..Default::default() })),
            line(2_100, LogEvent::TcSent { peer: id, epoch: 1 }),
            line(3_999, LogEvent::Traffic(TrafficSample { publish_bytes: 100, publish_packets: 2, ..Default::default() })),
        ];
        let marks = vec![Mark { t_ms: 2_050, label: "kill a".into() }, Mark { t_ms: 2_060, label: "x".into() }];
        let rows = build_timeline(&lines, &marks, 1_000, 1_000);
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].bpdu_bytes, rows[0].bpdu_packets), (76, 2));
        assert_eq!((rows[1].tc_sent, rows[1].marks.as_str()), (1, "kill a; x"));
        assert_eq!(rows[2].publish_packets, 2);
        let w = window(&rows, 0.0, 2.0);
        assert_eq!((w.bpdu_bytes, w.tc_sent), (76, 1));
    }

    #[test]
    fn empty_input_gives_one_row() {
        assert_eq!(build_timeline(&[], &[], 5, 1000).len(), 1);
    }
}
