use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::runtime::DEFAULT_RING_CAPACITY;
use crate::sched::Node;

/// Environment variable holding the shared token for daemon and client.
pub const TOKEN_ENV: &str = "MINIQ_TOKEN";
pub const DEFAULT_TICK_MS: u64 = 200;
pub const MIN_TICK_MS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: String,
    pub slots: u32,
    #[serde(default)]
    pub features: Vec<String>,
}

/// Daemon settings, read from a TOML file:
///
/// ```toml
/// listen = "127.0.0.1:6817"
/// token = "change-me"          # or set MINIQ_TOKEN
/// tick_interval_ms = 200
/// journal = "miniq.journal"    # relative paths resolve against the file
/// workdir = "."
/// backfill = true
///
/// [[nodes]]
/// id = "n1"
/// slots = 8
/// features = ["gpu"]
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaemonConfig {
    pub listen: String,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default = "default_tick")]
    pub tick_interval_ms: u64,
    pub nodes: Vec<NodeConfig>,
    pub journal: PathBuf,
    pub workdir: PathBuf,
    #[serde(default = "default_true")]
    pub backfill: bool,
    #[serde(default = "default_ring")]
    pub ring_capacity: usize,
}

fn default_tick() -> u64 {
    DEFAULT_TICK_MS
}

fn default_true() -> bool {
    true
}

fn default_ring() -> usize {
    DEFAULT_RING_CAPACITY
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl DaemonConfig {
    /// A config with defaults for everything but the essentials.
    pub fn new(
        listen: impl Into<String>,
        token: impl Into<String>,
        nodes: Vec<NodeConfig>,
        journal: impl Into<PathBuf>,
        workdir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            listen: listen.into(),
            token: Some(token.into()),
            tick_interval_ms: DEFAULT_TICK_MS,
            nodes,
            journal: journal.into(),
            workdir: workdir.into(),
            backfill: true,
            ring_capacity: DEFAULT_RING_CAPACITY,
        }
    }

    /// Reads and validates a config file. A missing `token` is taken from
    /// `MINIQ_TOKEN`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: DaemonConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.journal, &mut config.workdir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if config.token.as_deref().is_none_or(str::is_empty) {
            config.token = std::env::var(TOKEN_ENV).ok();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.token.as_deref().is_none_or(str::is_empty) {
            return invalid(format!("token is empty; set it in the config or via {TOKEN_ENV}"));
        }
        if self.tick_interval_ms < MIN_TICK_MS {
            return invalid(format!("tick_interval_ms must be at least {MIN_TICK_MS}"));
        }
        if self.nodes.is_empty() {
            return invalid("at least one node must be configured".into());
        }
        if self.ring_capacity == 0 {
            return invalid("ring_capacity must be positive".into());
        }
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if node.id.is_empty() || !seen.insert(node.id.as_str()) {
                return invalid(format!("node id {:?} is empty or repeated", node.id));
            }
            if node.slots < 1 {
                return invalid(format!("node {:?} needs at least one slot", node.id));
            }
            if let Some(f) = node
                .features
                .iter()
                .find(|f| f.is_empty() || !f.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()))
            {
                return invalid(format!("node {:?}: feature {f:?} must be lowercase alphanumeric", node.id));
            }
        }
        Ok(())
    }

    pub fn token(&self) -> &str {
        self.token.as_deref().unwrap_or_default()
    }

    pub fn tick_interval(&self) -> Duration {
        Duration::from_millis(self.tick_interval_ms)
    }

    pub fn inventory(&self) -> Vec<Node> {
        self.nodes
            .iter()
            .map(|n| {
                n.features
                    .iter()
                    .fold(Node::new(&n.id, n.slots), |node, f| node.with_feature(f))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
listen = "127.0.0.1:0"
token = "t"
journal = "state/journal"
workdir = "/srv/miniq"

[[nodes]]
id = "n1"
slots = 8

[[nodes]]
id = "g1"
slots = 4
features = ["gpu"]
"#;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("miniq.toml");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_with_defaults() {
        let (dir, path) = write(SAMPLE);
        let c = DaemonConfig::load(&path).unwrap();
        assert_eq!(c.tick_interval(), Duration::from_millis(200));
        assert_eq!(c.journal, dir.path().join("state/journal"));
        assert_eq!(c.workdir, PathBuf::from("/srv/miniq"));
        assert!(c.backfill);
        let nodes = c.inventory();
        assert_eq!(nodes[1].features.iter().collect::<Vec<_>>(), ["gpu"]);
        assert_eq!(nodes[0].slots_free, 8);
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [
            ("token = \"t\"\n", "token = \"t\"\ntick_interval_ms = 5\n"),
            ("slots = 8", "slots = 0"),
            ("id = \"g1\"", "id = \"n1\""),
            ("[\"gpu\"]", "[\"GPU\"]"),
        ] {
            let (_dir, path) = write(&SAMPLE.replacen(from, to, 1));
            assert!(
                matches!(DaemonConfig::load(&path), Err(ConfigError::Invalid(_))),
                "{to}"
            );
        }
        let no_nodes = SAMPLE.split("[[nodes]]").next().unwrap().to_string() + "nodes = []\n";
        let (_dir, path) = write(&no_nodes);
        assert!(matches!(DaemonConfig::load(&path), Err(ConfigError::Invalid(_))));
        let (_dir, path) = write(&SAMPLE.replace("journal", "jornal"));
        assert!(matches!(DaemonConfig::load(&path), Err(ConfigError::Parse(_))));
    }
}
