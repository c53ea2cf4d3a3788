use serde::{Deserialize, Serialize};

/// Delay summary in milliseconds. Percentiles use the nearest-rank method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl DelayStats {
    /// `None` for an empty sample.
    pub fn from_micros(samples: &[u64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let sum: u128 = sorted.iter().map(|&v| u128::from(v)).sum();
        let ms = |us: u64| us as f64 / 1000.0;
        Some(Self {
            count: sorted.len(),
            mean_ms: sum as f64 / sorted.len() as f64 / 1000.0,
            p50_ms: ms(nearest_rank(&sorted, 50)),
            p95_ms: ms(nearest_rank(&sorted, 95)),
            max_ms: ms(*sorted.last().unwrap()),
        })
    }
}

/// Smallest value with at least `pct` percent of the sample at or below it.
fn nearest_rank(sorted: &[u64], pct: usize) -> u64 {
    let rank = (pct * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sample_has_no_stats() {
        assert_eq!(DelayStats::from_micros(&[]), None);
    }

    #[test]
    fn small_sample() {
        let s = DelayStats::from_micros(&[4000, 1000, 3000, 2000]).unwrap();
        assert_eq!(s.count, 4);
        assert_eq!(s.mean_ms, 2.5);
        assert_eq!(s.p50_ms, 2.0);
        assert_eq!(s.p95_ms, 4.0);
        assert_eq!(s.max_ms, 4.0);
    }

    #[test]
    fn percentiles_against_counting_definition() {
        // 1..=200 ms: the p-th percentile is the value v with exactly
        // ceil(p * 200 / 100) samples at or below it.
        let v: Vec<u64> = (1..=200).rev().map(|i| i * 1000).collect();
        let s = DelayStats::from_micros(&v).unwrap();
        assert_eq!(s.p50_ms, 100.0);
        assert_eq!(s.p95_ms, 190.0);
        assert_eq!(s.mean_ms, 100.5);
    }
}
