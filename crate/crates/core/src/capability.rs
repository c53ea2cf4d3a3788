//! Broker capability: a weighted sum of CPU speed and memory used to elect
//! the tree root.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CapabilityError {
    #[error("capability weights must be finite and non-negative (alpha={alpha}, beta={beta})")]
    InvalidWeight { alpha: f64, beta: f64 },
    #[error("alpha and beta are both zero: every broker would tie on capability")]
    ZeroWeights,
    #[error("could not read {path}: {reason}")]
    Introspection { path: &'static str, reason: String },
}

/// Inputs and result of the capability computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    pub cpu_mhz: u64,
    pub ram_mb: u64,
    pub alpha: f64,
    pub beta: f64,
    pub value: u64,
}

impl Capability {
    pub fn new(cpu_mhz: u64, ram_mb: u64, alpha: f64, beta: f64) -> Result<Self, CapabilityError> {
        let value = compute_capability(cpu_mhz, ram_mb, alpha, beta)?;
        Ok(Self {
            cpu_mhz,
            ram_mb,
            alpha,
            beta,
            value,
        })
    }

    /// Reads CPU speed and total memory from `/proc/cpuinfo` and `/proc/meminfo`.
    pub fn from_system(alpha: f64, beta: f64) -> Result<Self, CapabilityError> {
        let cpuinfo = read_proc("/proc/cpuinfo")?;
        let meminfo = read_proc("/proc/meminfo")?;
        let cpu_mhz = parse_cpu_mhz(&cpuinfo).unwrap_or(0);
        let ram_mb = parse_mem_total_mb(&meminfo).ok_or_else(|| CapabilityError::Introspection {
            path: "/proc/meminfo",
            reason: "no MemTotal line".into(),
        })?;
        Self::new(cpu_mhz, ram_mb, alpha, beta)
    }
}

fn read_proc(path: &'static str) -> Result<String, CapabilityError> {
    std::fs::read_to_string(path).map_err(|e| CapabilityError::Introspection {
        path,
        reason: e.to_string(),
    })
}

/// `round(alpha * cpu_mhz + beta * ram_mb)`, halves rounded away from zero,
/// saturating at `u64::MAX`.
pub fn compute_capability(
    cpu_mhz: u64,
    ram_mb: u64,
    alpha: f64,
    beta: f64,
) -> Result<u64, CapabilityError> {
    let valid = |w: f64| w.is_finite() && w >= 0.0;
    if !valid(alpha) || !valid(beta) {
        return Err(CapabilityError::InvalidWeight { alpha, beta });
    }
    if alpha == 0.0 && beta == 0.0 {
        return Err(CapabilityError::ZeroWeights);
    }
    let c = (alpha * cpu_mhz as f64 + beta * ram_mb as f64).round();
    // `as` saturates for out-of-range floats
    Ok(c as u64)
}

/// Highest `cpu MHz` across processors, truncated to whole MHz.
pub fn parse_cpu_mhz(cpuinfo: &str) -> Option<u64> {
    cpuinfo
        .lines()
        .filter_map(|l| {
            let (key, value) = l.split_once(':')?;
            (key.trim() == "cpu MHz").then(|| value.trim().parse::<f64>().ok())?
        })
        .map(|mhz| mhz as u64)
        .max()
}

pub fn parse_mem_total_mb(meminfo: &str) -> Option<u64> {
    meminfo.lines().find_map(|l| {
        let rest = l.strip_prefix("MemTotal:")?;
        let kb: u64 = rest.trim().trim_end_matches("kB").trim().parse().ok()?;
        Some(kb / 1024)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    /// Exact rounding of alpha*L + beta*R with half-up on rationals.
    fn exact(l: u64, r: u64, alpha: f64, beta: f64) -> u64 {
        let a = BigRational::from_float(alpha).unwrap();
        let b = BigRational::from_float(beta).unwrap();
        let sum = a * BigRational::from_integer(l.into()) + b * BigRational::from_integer(r.into());
        let half = BigRational::new(1.into(), 2.into());
        let floored = (sum + half).floor();
        floored.to_integer().try_into().unwrap()
    }

    #[test]
    fn unit_weights_sum_directly() {
        assert_eq!(compute_capability(3400, 16384, 1.0, 1.0).unwrap(), 19784);
    }

    #[test]
    fn zero_resources_give_zero() {
        for (a, b) in [(1.0, 1.0), (0.5, 0.0), (0.0, 3.0)] {
            assert_eq!(compute_capability(0, 0, a, b).unwrap(), 0);
        }
    }

    #[test]
    fn fractional_weights_match_exact_rational_oracle() {
        assert_eq!(exact(2400, 1024, 0.5, 0.25), 1456);
        assert_eq!(compute_capability(2400, 1024, 0.5, 0.25).unwrap(), 1456);
        let weights = [0.0, 0.125, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.25];
        let resources = [0u64, 1, 3, 7, 999, 1024, 2400, 3400, 16_384, 65_537, 1 << 20];
        for &a in &weights {
            for &b in &weights {
                if a == 0.0 && b == 0.0 {
                    continue;
                }
                for &l in &resources {
                    for &r in &resources {
                        assert_eq!(
                            compute_capability(l, r, a, b).unwrap(),
                            exact(l, r, a, b),
                            "L={l} R={r} alpha={a} beta={b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn monotone_in_each_input() {
        let mut prev = 0;
        for l in (0..10_000).step_by(37) {
            let c = compute_capability(l, 512, 0.3, 0.7).unwrap();
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert_eq!(
            compute_capability(1, 1, 0.0, 0.0),
            Err(CapabilityError::ZeroWeights)
        );
        assert!(matches!(
            compute_capability(1, 1, -1.0, 1.0),
            Err(CapabilityError::InvalidWeight { .. })
        ));
        assert!(compute_capability(1, 1, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn parses_proc_files() {
        let cpuinfo = "processor\t: 0\ncpu MHz\t\t: 2100.000\n\nprocessor\t: 1\ncpu MHz\t\t: 3400.512\n";
        assert_eq!(parse_cpu_mhz(cpuinfo), Some(3400));
        assert_eq!(parse_cpu_mhz("model name: x\n"), None);
        let meminfo = "MemTotal:       16777216 kB\nMemFree:         1 kB\n";
        assert_eq!(parse_mem_total_mb(meminfo), Some(16384));
    }
}
