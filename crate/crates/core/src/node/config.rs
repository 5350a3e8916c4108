use std::collections::HashSet;
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::fault::{PolicyError, RetryPolicy, DEFAULT_GRACE};
use crate::svp::Place;

/// Environment variable overriding the listen endpoint.
pub const LISTEN_ENV: &str = "DSVP_LISTEN";
/// Name of the place every node has for itself.
pub const LOCAL_PLACE: &str = "local";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("place {0:?} is defined twice")]
    DuplicatePlace(String),
    #[error("place {name:?}: endpoint {endpoint:?} is not host:port or \"local\"")]
    BadEndpoint { name: String, endpoint: String },
    #[error("listen endpoint {0:?} is not host:port")]
    BadListen(String),
    #[error("node_id must not be empty")]
    EmptyNodeId,
    #[error("retry policy: {0}")]
    Policy(#[from] PolicyError),
}

/// One row of the place table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaceEntry {
    pub name: String,
    pub place: Place,
}

/// Static node configuration.
///
/// ```toml
/// node_id = "a"
/// listen = "127.0.0.1:7101"
/// max_inbound = 256
/// watchdog_grace_ms = 250
///
/// [[place]]
/// name = "b"
/// endpoint = "127.0.0.1:7102"
/// resource = "default"
/// exclusive = false
///
/// [retry]
/// max_attempts = 3
/// base_delay_ms = 50
/// multiplier = 2.0
/// connect_timeout_ms = 1000
/// overall_deadline_ms = 5000
/// ```
///
/// The place `local` (the node itself, default resource) always exists.
#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub node_id: String,
    pub listen: Option<String>,
    pub places: Vec<PlaceEntry>,
    pub retry: RetryPolicy,
    pub watchdog_grace: Duration,
    /// Cap on concurrently running families received from other nodes.
    pub max_inbound: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    node_id: String,
    listen: Option<String>,
    max_inbound: Option<usize>,
    watchdog_grace_ms: Option<u64>,
    #[serde(default)]
    place: Vec<RawPlace>,
    retry: Option<RawRetry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlace {
    name: String,
    endpoint: String,
    resource: Option<String>,
    #[serde(default)]
    exclusive: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRetry {
    max_attempts: Option<u32>,
    base_delay_ms: Option<u64>,
    multiplier: Option<f64>,
    connect_timeout_ms: Option<u64>,
    overall_deadline_ms: Option<u64>,
}

fn is_host_port(s: &str) -> bool {
    match s.rsplit_once(':') {
        Some((host, port)) => !host.is_empty() && port.parse::<u16>().is_ok(),
        None => false,
    }
}

impl NodeConfig {
    /// A node with only the local place and default policies.
    pub fn new(node_id: &str) -> NodeConfig {
        NodeConfig {
            node_id: node_id.to_owned(),
            listen: None,
            places: vec![PlaceEntry {
                name: LOCAL_PLACE.to_owned(),
                place: Place::local(),
            }],
            retry: RetryPolicy::default(),
            watchdog_grace: DEFAULT_GRACE,
            max_inbound: None,
        }
    }

    /// Adds a place; names must be unique.
    pub fn with_place(mut self, name: &str, place: Place) -> Result<NodeConfig, ConfigError> {
        if self.places.iter().any(|p| p.name == name) {
            return Err(ConfigError::DuplicatePlace(name.to_owned()));
        }
        self.places.push(PlaceEntry {
            name: name.to_owned(),
            place,
        });
        Ok(self)
    }

    pub fn from_toml(text: &str) -> Result<NodeConfig, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        if raw.node_id.is_empty() {
            return Err(ConfigError::EmptyNodeId);
        }
        let mut cfg = NodeConfig::new(&raw.node_id);
        if let Some(listen) = raw.listen {
            if !is_host_port(&listen) {
                return Err(ConfigError::BadListen(listen));
            }
            cfg.listen = Some(listen);
        }
        cfg.max_inbound = raw.max_inbound;
        if let Some(ms) = raw.watchdog_grace_ms {
            cfg.watchdog_grace = Duration::from_millis(ms);
        }
        let mut seen = HashSet::new();
        for p in raw.place {
            if !seen.insert(p.name.clone()) {
                return Err(ConfigError::DuplicatePlace(p.name));
            }
            let resource = p.resource.as_deref().unwrap_or(Place::DEFAULT_RESOURCE);
            let place = if p.endpoint == LOCAL_PLACE {
                Place {
                    resource: resource.to_owned(),
                    exclusive: p.exclusive,
                    ..Place::local()
                }
            } else if is_host_port(&p.endpoint) {
                Place::remote(&p.endpoint, resource, p.exclusive)
            } else {
                return Err(ConfigError::BadEndpoint {
                    name: p.name,
                    endpoint: p.endpoint,
                });
            };
            if p.name == LOCAL_PLACE {
                // An explicit entry replaces the implicit one.
                cfg.places[0].place = place;
            } else {
                cfg.places.push(PlaceEntry { name: p.name, place });
            }
        }
        if let Some(r) = raw.retry {
            let d = RetryPolicy::default();
            cfg.retry = RetryPolicy {
                max_attempts: r.max_attempts.unwrap_or(d.max_attempts),
                base_delay: r.base_delay_ms.map_or(d.base_delay, Duration::from_millis),
                multiplier: r.multiplier.unwrap_or(d.multiplier),
                connect_timeout: r.connect_timeout_ms.map_or(d.connect_timeout, Duration::from_millis),
                overall_deadline: r.overall_deadline_ms.map(Duration::from_millis),
            };
            cfg.retry.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<NodeConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        NodeConfig::from_toml(&text)
    }

    /// Applies `DSVP_LISTEN` if set.
    pub fn apply_env(mut self) -> Result<NodeConfig, ConfigError> {
        if let Ok(listen) = std::env::var(LISTEN_ENV) {
            if !is_host_port(&listen) {
                return Err(ConfigError::BadListen(listen));
            }
            self.listen = Some(listen);
        }
        Ok(self)
    }

    pub fn place(&self, name: &str) -> Option<&Place> {
        self.places.iter().find(|p| p.name == name).map(|p| &p.place)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_file() {
        let cfg = NodeConfig::from_toml(
            r#"
            node_id = "a"
            listen = "127.0.0.1:7101"
            max_inbound = 8
            [[place]]
            name = "b"
            endpoint = "127.0.0.1:7102"
            [[place]]
            name = "counter"
            endpoint = "10.0.0.2:7000"
            resource = "ctr"
            exclusive = true
            [retry]
            max_attempts = 5
            overall_deadline_ms = 2000
            "#,
        )
        .unwrap();
        assert_eq!(cfg.node_id, "a");
        assert_eq!(cfg.place("local"), Some(&Place::local()));
        assert_eq!(cfg.place("b"), Some(&Place::remote("127.0.0.1:7102", "default", false)));
        assert_eq!(cfg.place("counter"), Some(&Place::remote("10.0.0.2:7000", "ctr", true)));
        assert_eq!(cfg.retry.max_attempts, 5);
        assert_eq!(cfg.retry.base_delay, Duration::from_millis(50));
        assert_eq!(cfg.retry.overall_deadline, Some(Duration::from_secs(2)));
        assert_eq!(cfg.max_inbound, Some(8));
    }

    #[test]
    fn rejects_bad_tables() {
        let dup = "node_id = \"a\"\n[[place]]\nname = \"b\"\nendpoint = \"h:1\"\n[[place]]\nname = \"b\"\nendpoint = \"h:2\"\n";
        assert!(matches!(NodeConfig::from_toml(dup), Err(ConfigError::DuplicatePlace(_))));
        let bad = "node_id = \"a\"\n[[place]]\nname = \"b\"\nendpoint = \"nowhere\"\n";
        assert!(matches!(NodeConfig::from_toml(bad), Err(ConfigError::BadEndpoint { .. })));
        assert!(matches!(
            NodeConfig::from_toml("node_id = \"a\"\nlisten = \"x\"\n"),
            Err(ConfigError::BadListen(_))
        ));
        assert!(NodeConfig::from_toml("node_id = \"a\"\nbogus = 1\n").is_err());
        assert!(matches!(
            NodeConfig::from_toml("node_id = \"a\"\n[retry]\nmax_attempts = 0\n"),
            Err(ConfigError::Policy(_))
        ));
    }

    #[test]
    fn explicit_local_entry_replaces_the_default() {
        let cfg = NodeConfig::from_toml(
            "node_id = \"a\"\n[[place]]\nname = \"local\"\nendpoint = \"local\"\nresource = \"gpu\"\n",
        )
        .unwrap();
        assert_eq!(cfg.places.len(), 1);
        assert_eq!(cfg.place("local").unwrap().resource, "gpu");
    }
}
