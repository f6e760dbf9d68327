//! JSON scenario files: nodes, shares, files and a timeline of actions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::SocketAddrV4;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{OsProfile, Settings};
use crate::identity::{generate_peer_id, generate_secret, AccessLevel, PeerId, Secret, ShareId};
use crate::integrity::piece_count;

use super::export::write_node_tree;
use super::network::{NetConfig, Network, NodeAction, NodeId};
use super::node::{ByzantineConfig, NodeState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

fn default_epoch() -> i64 {
    1_400_000_000
}

fn default_checkin() -> u64 {
    30
}

fn default_latency() -> [u64; 2] {
    [5, 40]
}

fn default_lan() -> String {
    "lan0".into()
}

fn default_user() -> String {
    "user".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    #[serde(default = "default_epoch")]
    pub epoch_base: i64,
    #[serde(default = "default_checkin")]
    pub checkin_minutes: u64,
    #[serde(default = "default_latency")]
    pub latency_ms: [u64; 2],
    #[serde(default)]
    pub tracker: Option<SocketAddrV4>,
    /// Simulation stops here; defaults to one minute after the last action.
    #[serde(default)]
    pub end_ms: Option<u64>,
    pub shares: Vec<ShareSpec>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub files: Vec<FileSpec>,
    #[serde(default)]
    pub timeline: Vec<TimelineEntry>,
}

/// A share, keyed by name. Its Master secret is either given or generated
/// from `seed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShareSpec {
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub secret: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsSpec {
    pub sync_archive_enabled: Option<bool>,
    pub archive_days: Option<u64>,
    pub piece_len: Option<u64>,
    pub checkin_minutes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub address: SocketAddrV4,
    #[serde(default = "default_lan")]
    pub lan: String,
    #[serde(default)]
    pub os: OsProfile,
    #[serde(default = "default_user")]
    pub user: String,
    #[serde(default = "default_true")]
    pub online: bool,
    #[serde(default)]
    pub peer_id: Option<PeerId>,
    #[serde(default)]
    pub settings: SettingsSpec,
    #[serde(default)]
    pub byzantine: Option<ByzantineConfig>,
    #[serde(default)]
    pub shares: Vec<NodeShareSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    #[default]
    Master,
    #[serde(alias = "read_only")]
    Readonly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeShareSpec {
    pub share: String,
    #[serde(default)]
    pub access: Access,
    /// Share folder as recorded in `sync.dat`; defaults to the OS layout.
    #[serde(default)]
    pub folder: Option<String>,
    pub use_dht: Option<bool>,
    pub use_lan_broadcast: Option<bool>,
    pub use_relay: Option<bool>,
    pub use_tracker: Option<bool>,
    pub use_known_hosts: Option<bool>,
    #[serde(default)]
    pub known_hosts: Vec<String>,
}

/// A file a node authors before the timeline starts: inline `content`, or
/// `size` bytes generated from `seed`. `pieces` keeps only those pieces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub node: String,
    pub share: String,
    pub path: String,
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default)]
    pub size: Option<u64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub pieces: Option<BTreeSet<u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum TimelineAction {
    Sync { node: String, share: String },
    Delete { node: String, share: String, path: String },
    SecureDelete { node: String, share: String, path: String },
    ModifyOffline { node: String, share: String, path: String, content: String },
    GoOffline { node: String },
    GoOnline { node: String },
    Announce { node: String, share: String },
}

impl TimelineAction {
    fn node(&self) -> &str {
        match self {
            TimelineAction::Sync { node, .. }
            | TimelineAction::Delete { node, .. }
            | TimelineAction::SecureDelete { node, .. }
            | TimelineAction::ModifyOffline { node, .. }
            | TimelineAction::GoOffline { node }
            | TimelineAction::GoOnline { node }
            | TimelineAction::Announce { node, .. } => node,
        }
    }

    fn share(&self) -> Option<&str> {
        match self {
            TimelineAction::Sync { share, .. }
            | TimelineAction::Delete { share, .. }
            | TimelineAction::SecureDelete { share, .. }
            | TimelineAction::ModifyOffline { share, .. }
            | TimelineAction::Announce { share, .. } => Some(share),
            TimelineAction::GoOffline { .. } | TimelineAction::GoOnline { .. } => None,
        }
    }

    fn path(&self) -> Option<&str> {
        match self {
            TimelineAction::Delete { path, .. }
            | TimelineAction::SecureDelete { path, .. }
            | TimelineAction::ModifyOffline { path, .. } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: TimelineAction,
}

/// Deterministic printable text of `size` bytes.
pub fn seeded_content(size: u64, seed: u64) -> Vec<u8> {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz      \n";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let spec: ScenarioSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<ScenarioSpec, ScenarioError> {
        let spec: ScenarioSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    fn share_secret(&self, idx: usize) -> Result<Secret, ScenarioError> {
        let s = &self.shares[idx];
        let field = format!("shares[{idx}]");
        match (&s.seed, &s.secret) {
            (Some(seed), None) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                generate_secret(AccessLevel::Master, &mut rng).map_err(|e| invalid(field, e.to_string()))
            }
            (None, Some(text)) => {
                let secret =
                    Secret::from_text(text).map_err(|e| invalid(format!("{field}.secret"), e.to_string()))?;
                if secret.level() == AccessLevel::Encrypted {
                    return Err(invalid(format!("{field}.secret"), "encrypted secrets are not simulated"));
                }
                Ok(secret)
            }
            _ => Err(invalid(field, "exactly one of `seed` or `secret` is required")),
        }
    }

    fn settings_for(&self, idx: usize) -> Result<Settings, ScenarioError> {
        let s = &self.nodes[idx].settings;
        let d = Settings::default();
        let out = Settings {
            sync_archive_enabled: s.sync_archive_enabled.unwrap_or(d.sync_archive_enabled),
            archive_days: s.archive_days.unwrap_or(d.archive_days),
            piece_len: s.piece_len.unwrap_or(d.piece_len),
            checkin_minutes: s.checkin_minutes.unwrap_or(self.checkin_minutes),
            extra: d.extra,
        };
        out.validate()
            .map_err(|e| invalid(format!("nodes[{idx}].settings"), e.to_string()))?;
        Ok(out)
    }

    /// Checks every cross-reference. Errors name the offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let [lo, hi] = self.latency_ms;
        if lo > hi {
            return Err(invalid("latency_ms", "minimum exceeds maximum"));
        }
        if !(10..=60).contains(&self.checkin_minutes) {
            return Err(invalid("checkin_minutes", "must be within 10..=60"));
        }
        let mut share_names = BTreeMap::new();
        for (i, s) in self.shares.iter().enumerate() {
            if share_names.insert(s.name.as_str(), i).is_some() {
                return Err(invalid(format!("shares[{i}].name"), format!("duplicate share {:?}", s.name)));
            }
            self.share_secret(i)?;
        }
        let mut node_names = BTreeMap::new();
        let mut addrs = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if node_names.insert(n.name.as_str(), i).is_some() {
                return Err(invalid(format!("nodes[{i}].name"), format!("duplicate node {:?}", n.name)));
            }
            if !addrs.insert(n.address) || Some(n.address) == self.tracker {
                return Err(invalid(format!("nodes[{i}].address"), format!("address {} already used", n.address)));
            }
            self.settings_for(i)?;
            let mut held = BTreeSet::new();
            for (j, ns) in n.shares.iter().enumerate() {
                let field = format!("nodes[{i}].shares[{j}]");
                let Some(&si) = share_names.get(ns.share.as_str()) else {
                    return Err(invalid(format!("{field}.share"), format!("undeclared share {:?}", ns.share)));
                };
                if !held.insert(ns.share.as_str()) {
                    return Err(invalid(format!("{field}.share"), "share listed twice"));
                }
                if ns.access == Access::Master && self.share_secret(si)?.level() != AccessLevel::Master {
                    return Err(invalid(format!("{field}.access"), "share only has a read-only secret"));
                }
                for (k, h) in ns.known_hosts.iter().enumerate() {
                    if h.parse::<SocketAddrV4>().is_err() {
                        return Err(invalid(format!("{field}.known_hosts[{k}]"), "expected address:port"));
                    }
                }
            }
        }
        let holds = |node: &str, share: &str| {
            node_names
                .get(node)
                .is_some_and(|&i| self.nodes[i].shares.iter().any(|s| s.share == share))
        };
        let mut declared_paths = BTreeSet::new();
        for (i, f) in self.files.iter().enumerate() {
            let field = format!("files[{i}]");
            let Some(&ni) = node_names.get(f.node.as_str()) else {
                return Err(invalid(format!("{field}.node"), format!("undeclared node {:?}", f.node)));
            };
            if !share_names.contains_key(f.share.as_str()) {
                return Err(invalid(format!("{field}.share"), format!("undeclared share {:?}", f.share)));
            }
            if !holds(&f.node, &f.share) {
                return Err(invalid(format!("{field}.share"), format!("{} does not hold {:?}", f.node, f.share)));
            }
            if f.path.is_empty() || f.path.split('/').any(|c| c.is_empty() || c == "..") {
                return Err(invalid(format!("{field}.path"), format!("bad relative path {:?}", f.path)));
            }
            let size = match (&f.content, f.size) {
                (Some(c), None) => c.len() as u64,
                (None, Some(s)) => s,
                _ => return Err(invalid(field, "exactly one of `content` or `size` is required")),
            };
            if let Some(pieces) = &f.pieces {
                let count = piece_count(size, self.settings_for(ni)?.piece_len);
                if let Some(bad) = pieces.iter().find(|&&p| p >= count) {
                    return Err(invalid(format!("{field}.pieces"), format!("piece {bad} of {count}")));
                }
            }
            declared_paths.insert((f.share.as_str(), f.path.as_str()));
        }
        let mut last = 0;
        for (i, t) in self.timeline.iter().enumerate() {
            let field = format!("timeline[{i}]");
            if t.at_ms < last {
                return Err(invalid(format!("{field}.at_ms"), "timeline times must be non-decreasing"));
            }
            last = t.at_ms;
            let node = t.action.node();
            if !node_names.contains_key(node) {
                return Err(invalid(format!("{field}.node"), format!("undeclared node {node:?}")));
            }
            if let Some(share) = t.action.share() {
                if !share_names.contains_key(share) {
                    return Err(invalid(format!("{field}.share"), format!("undeclared share {share:?}")));
                }
                if !holds(node, share) {
                    return Err(invalid(format!("{field}.share"), format!("{node} does not hold {share:?}")));
                }
                if let Some(path) = t.action.path() {
                    if !declared_paths.contains(&(share, path)) {
                        return Err(invalid(format!("{field}.path"), format!("undeclared file {path:?}")));
                    }
                }
            }
        }
        if let Some(end) = self.end_ms {
            if end < last {
                return Err(invalid("end_ms", "ends before the last timeline action"));
            }
        }
        Ok(())
    }

    pub fn end_time(&self) -> u64 {
        self.end_ms
            .unwrap_or_else(|| self.timeline.last().map_or(0, |t| t.at_ms) + 60_000)
    }

    pub fn net_config(&self) -> NetConfig {
        let d = NetConfig::default();
        NetConfig {
            seed: self.seed,
            epoch_base: self.epoch_base,
            latency_ms: (self.latency_ms[0], self.latency_ms[1]),
            timeout_ms: d.timeout_ms,
            tracker_addr: self.tracker.unwrap_or(d.tracker_addr),
            ttl_ms: self.checkin_minutes * 60_000,
        }
    }

    /// Builds the network with files placed and the timeline scheduled.
    pub fn build(&self) -> Result<ScenarioRun, ScenarioError> {
        self.validate()?;
        let mut net = Network::new(self.net_config());
        let mut shares = BTreeMap::new();
        for (i, s) in self.shares.iter().enumerate() {
            let secret = self.share_secret(i)?;
            let id = secret.share_id().map_err(|e| invalid(format!("shares[{i}]"), e.to_string()))?;
            shares.insert(s.name.clone(), (id, secret));
        }
        let mut id_rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut nodes = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let generated = generate_peer_id(&mut id_rng);
            let mut node = NodeState::new(&n.name, n.peer_id.unwrap_or(generated), n.address, &n.lan);
            node.os = n.os;
            node.user = n.user.clone();
            node.online = n.online;
            node.settings = self.settings_for(i)?;
            node.byzantine = n.byzantine.clone();
            for (j, ns) in n.shares.iter().enumerate() {
                let field = format!("nodes[{i}].shares[{j}]");
                let (_, master) = &shares[&ns.share];
                let secret = match ns.access {
                    Access::Master => master.clone(),
                    Access::Readonly => master.derive_readonly().unwrap_or_else(|_| master.clone()),
                };
                let folder = ns
                    .folder
                    .clone()
                    .unwrap_or_else(|| n.os.default_share_path(&n.user, &ns.share));
                let id = node
                    .add_share(secret, folder)
                    .map_err(|e| invalid(&field, e.to_string()))?;
                let cfg = &mut node.share_mut(&id).expect("just added").config;
                cfg.use_dht = ns.use_dht.unwrap_or(cfg.use_dht);
                cfg.use_lan_broadcast = ns.use_lan_broadcast.unwrap_or(cfg.use_lan_broadcast);
                cfg.use_relay = ns.use_relay.unwrap_or(cfg.use_relay);
                cfg.use_tracker = ns.use_tracker.unwrap_or(cfg.use_tracker);
                cfg.use_known_hosts = ns.use_known_hosts.unwrap_or(cfg.use_known_hosts);
                cfg.known_hosts = ns.known_hosts.clone();
            }
            nodes.insert(n.name.clone(), net.add_node(node));
        }
        let epoch = net.epoch_now();
        for (i, f) in self.files.iter().enumerate() {
            let bytes = match (&f.content, f.size) {
                (Some(c), _) => c.as_bytes().to_vec(),
                (None, Some(size)) => seeded_content(size, f.seed.unwrap_or(0)),
                (None, None) => unreachable!("validated"),
            };
            let (share, _) = shares[&f.share];
            net.node_mut(nodes[&f.node])
                .add_file(&share, &f.path, bytes, f.pieces.clone(), epoch)
                .map_err(|e| invalid(format!("files[{i}]"), e.to_string()))?;
        }
        for t in &self.timeline {
            let node = nodes[t.action.node()];
            let share = |name: &str| shares[name].0;
            let action = match &t.action {
                TimelineAction::Sync { share: s, .. } => NodeAction::Sync { node, share: share(s) },
                TimelineAction::Delete { share: s, path, .. } => NodeAction::Delete {
                    node,
                    share: share(s),
                    path: path.clone(),
                },
                TimelineAction::SecureDelete { share: s, path, .. } => NodeAction::SecureDelete {
                    node,
                    share: share(s),
                    path: path.clone(),
                },
                TimelineAction::ModifyOffline {
                    share: s, path, content, ..
                } => NodeAction::ModifyOffline {
                    node,
                    share: share(s),
                    path: path.clone(),
                    bytes: content.as_bytes().to_vec(),
                },
                TimelineAction::GoOffline { .. } => NodeAction::GoOffline { node },
                TimelineAction::GoOnline { .. } => NodeAction::GoOnline { node },
                TimelineAction::Announce { share: s, .. } => NodeAction::Announce { node, share: share(s) },
            };
            net.schedule(t.at_ms, action);
        }
        Ok(ScenarioRun {
            spec: self.clone(),
            net,
            nodes,
            shares,
        })
    }
}

/// A built scenario: the network plus name lookups.
pub struct ScenarioRun {
    pub spec: ScenarioSpec,
    pub net: Network,
    pub nodes: BTreeMap<String, NodeId>,
    /// Share name to (ShareID, secret as declared).
    pub shares: BTreeMap<String, (ShareId, Secret)>,
}

impl ScenarioRun {
    /// Runs the timeline to the scenario's end time.
    pub fn run(&mut self) -> usize {
        let end = self.spec.end_time();
        self.net.run_until(end)
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.nodes.get(name).copied()
    }

    pub fn share_id(&self, name: &str) -> Option<ShareId> {
        self.shares.get(name).map(|(id, _)| *id)
    }

    /// Writes `<out>/<node>/...` for every node, `<out>/trace.digest` and a
    /// copy of the scenario as `<out>/scenario.json`.
    pub fn write_outputs(&self, out: &Path) -> std::io::Result<()> {
        fs::create_dir_all(out)?;
        for (name, id) in &self.nodes {
            write_node_tree(&self.net, *id, &out.join(name), self.spec.seed)?;
        }
        fs::write(out.join("trace.digest"), format!("{}\n", self.net.trace_digest()))?;
        let json = serde_json::to_string_pretty(&self.spec).map_err(std::io::Error::other)?;
        fs::write(out.join("scenario.json"), json + "\n")
    }
}
