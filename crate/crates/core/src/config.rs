//! Broker configuration: a line-oriented `key value` file.
//!
//! ```text
//! # comment
//! listen_port 1884
//! peer 10.0.0.2:1883
//! peer broker3.local:1883
//! keep_alive 10
//! alpha 1
//! beta 0.5
//! capability 3400 16384
//! ```

use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::BrokerId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {value:?}")]
    BadValue {
        line: usize,
        key: &'static str,
        value: String,
    },
    #[error("keep_alive must be positive")]
    ZeroKeepAlive,
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrokerConfig {
    /// Brokers to bridge to at startup, as `host:port`.
    pub peers: Vec<String>,
    /// MQTT Keep Alive in seconds; also sets the tree timers.
    pub keep_alive: u16,
    pub alpha: f64,
    pub beta: f64,
    pub listen_port: u16,
    pub listen_address: Ipv4Addr,
    /// Address put in this broker's id. Defaults to the listen address, or
    /// loopback when listening on all interfaces.
    pub advertise_address: Option<Ipv4Addr>,
    /// Fixed (CPU MHz, RAM MB) instead of reading /proc.
    pub capability: Option<(u64, u64)>,
    /// JSON snapshot of tree state and counters, rewritten as it changes.
    pub status_file: Option<PathBuf>,
    /// Append-only JSON-lines log of tree events and bridge traffic.
    pub event_log: Option<PathBuf>,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            peers: Vec::new(),
            keep_alive: 10,
            alpha: 1.0,
            beta: 1.0,
            listen_port: 1883,
            listen_address: Ipv4Addr::UNSPECIFIED,
            advertise_address: None,
            capability: None,
            status_file: None,
            event_log: None,
        }
    }
}

impl BrokerConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once(char::is_whitespace)
                .map(|(k, v)| (k, v.trim()))
                .unwrap_or((content, ""));
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(line: usize, key: &'static str, v: &str) -> Result<T, ConfigError> {
            v.parse().map_err(|_| ConfigError::BadValue {
                line,
                key,
                value: v.to_owned(),
            })
        }
        match key {
            "peer" => {
                if value.rsplit_once(':').is_none_or(|(h, p)| h.is_empty() || p.parse::<u16>().is_err()) {
                    return Err(ConfigError::BadValue {
                        line,
                        key: "peer",
                        value: value.into(),
                    });
                }
                self.peers.push(value.to_owned());
            }
            "keep_alive" => self.keep_alive = parse(line, "keep_alive", value)?,
            "alpha" => self.alpha = parse(line, "alpha", value)?,
            "beta" => self.beta = parse(line, "beta", value)?,
            "listen_port" => self.listen_port = parse(line, "listen_port", value)?,
            "listen_address" => self.listen_address = parse(line, "listen_address", value)?,
            "advertise_address" => {
                self.advertise_address = Some(parse(line, "advertise_address", value)?)
            }
            "capability" => {
                let mut parts = value.split_whitespace();
                let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(ConfigError::BadValue {
                        line,
                        key: "capability",
                        value: value.into(),
                    });
                };
                self.capability = Some((parse(line, "capability", l)?, parse(line, "capability", r)?));
            }
            "status_file" => self.status_file = Some(PathBuf::from(value)),
            "event_log" => self.event_log = Some(PathBuf::from(value)),
            other => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: other.into(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.keep_alive == 0 {
            return Err(ConfigError::ZeroKeepAlive);
        }
        Ok(())
    }

    /// Renders the configuration in the format [`BrokerConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "listen_address {}", self.listen_address);
        let _ = writeln!(out, "listen_port {}", self.listen_port);
        if let Some(a) = self.advertise_address {
            let _ = writeln!(out, "advertise_address {a}");
        }
        let _ = writeln!(out, "keep_alive {}", self.keep_alive);
        let _ = writeln!(out, "alpha {}", self.alpha);
        let _ = writeln!(out, "beta {}", self.beta);
        if let Some((l, r)) = self.capability {
            let _ = writeln!(out, "capability {l} {r}");
        }
        for p in &self.peers {
            let _ = writeln!(out, "peer {p}");
        }
        if let Some(p) = &self.status_file {
            let _ = writeln!(out, "status_file {}", p.display());
        }
        if let Some(p) = &self.event_log {
            let _ = writeln!(out, "event_log {}", p.display());
        }
        out
    }

    pub fn keep_alive_duration(&self) -> Duration {
        Duration::from_secs(self.keep_alive.into())
    }

    pub fn broker_id(&self) -> BrokerId {
        let ip = self.advertise_address.unwrap_or(if self.listen_address.is_unspecified() {
            Ipv4Addr::LOCALHOST
        } else {
            self.listen_address
        });
        BrokerId::new(ip, self.listen_port)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = BrokerConfig {
            peers: vec!["127.0.0.1:2000".into(), "10.0.0.9:1883".into()],
            keep_alive: 4,
            alpha: 0.5,
            beta: 2.0,
            listen_port: 1999,
            listen_address: Ipv4Addr::LOCALHOST,
            advertise_address: Some(Ipv4Addr::new(10, 0, 0, 1)),
            capability: Some((3000, 8000)),
            status_file: Some("/tmp/s.json".into()),
            event_log: Some("/tmp/e.log".into()),
        };
        assert_eq!(BrokerConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let d = BrokerConfig::default();
        assert_eq!(BrokerConfig::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn parses_every_key() {
        let cfg = BrokerConfig::parse(
            "# broker b\n\
             listen_port 1884\n\
             listen_address 127.0.0.1\n\
             peer 127.0.0.1:1883   # first\n\
             peer localhost:1885\n\
             keep_alive 4\n\
             alpha 0.5\n\
             beta 0.25\n\
             capability 2400 1024\n\
             status_file /tmp/s.json\n\
             event_log /tmp/e.log\n",
        )
        .unwrap();
        assert_eq!(cfg.listen_port, 1884);
        assert_eq!(cfg.peers, vec!["127.0.0.1:1883", "localhost:1885"]);
        assert_eq!(cfg.keep_alive, 4);
        assert_eq!((cfg.alpha, cfg.beta), (0.5, 0.25));
        assert_eq!(cfg.capability, Some((2400, 1024)));
        assert_eq!(cfg.broker_id().to_string(), "127.0.0.1:1884");
        assert_eq!(cfg.status_file, Some(PathBuf::from("/tmp/s.json")));
    }

    #[test]
    fn defaults() {
        let cfg = BrokerConfig::parse("").unwrap();
        assert_eq!(cfg.listen_port, 1883);
        assert_eq!(cfg.keep_alive, 10);
        assert_eq!((cfg.alpha, cfg.beta), (1.0, 1.0));
        assert!(cfg.peers.is_empty());
        assert_eq!(cfg.broker_id().to_string(), "127.0.0.1:1883");
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(
            BrokerConfig::parse("colour blue"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            BrokerConfig::parse("\nkeep_alive ten"),
            Err(ConfigError::BadValue { line: 2, .. })
        ));
        assert!(BrokerConfig::parse("peer nohost").is_err());
        assert!(BrokerConfig::parse("capability 1").is_err());
        assert_eq!(BrokerConfig::parse("keep_alive 0"), Err(ConfigError::ZeroKeepAlive));
    }
}
