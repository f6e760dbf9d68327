//! Deterministic discrete-event simulation of the sync network: nodes holding
//! shares, a tracker, a single-hop DHT, LAN multicast, authenticated manifest
//! exchange and piece transfer.

mod clock;
mod dht;
mod export;
mod network;
mod node;
mod scenario;
mod tracker;
mod transport;
mod wire;

use std::collections::BTreeSet;
use std::fmt;
use std::net::{Ipv4Addr, SocketAddrV4};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::ArtifactError;
use crate::bencode::{BValue, DecodeError, DictBuilder};
use crate::identity::PeerId;

pub use clock::{EventHandle, SimClock};
pub use dht::{dht_closest, xor_distance, DHT_K};
pub use export::{memory_image, write_node_tree, NetLog, WireSummary};
pub use network::{NetConfig, NetEvent, Network, NodeAction, NodeId, SessionToken, SyncReport, TraceEntry};
pub use node::{ArchivedFile, ByzantineConfig, NodeState, Scope, ShareState, StoredFile};
pub use scenario::{
    load_scenario, seeded_content, Access, FileSpec, NodeShareSpec, NodeSpec, ScenarioError, ScenarioRun, ScenarioSpec,
    SettingsSpec, ShareSpec, TimelineAction, TimelineEntry,
};
pub use tracker::{Registration, TrackerState};
pub use transport::{InMemoryTransport, LoopbackTransport, Transport};
pub use wire::{MessageKind, WireMessage};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {0} is offline")]
    NodeOffline(String),
    #[error("{0} did not answer")]
    Unreachable(SocketAddrV4),
    #[error("share not held by the remote node")]
    UnknownShare,
    #[error("authentication failed")]
    AuthFailed,
    #[error("session token rejected")]
    BadToken,
    #[error("unknown file {0}")]
    UnknownFile(String),
    #[error("piece unavailable: {0}")]
    PieceUnavailable(String),
    #[error("no reachable DHT storage nodes")]
    NoReachableStorageNodes,
    #[error("remote error {code}: {detail}")]
    Remote { code: String, detail: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
}

impl NetError {
    pub(crate) fn from_wire(msg: &WireMessage) -> NetError {
        let detail = msg.text("detail").unwrap_or_default().to_string();
        match msg.text("code").unwrap_or_default() {
            "UnknownShare" => NetError::UnknownShare,
            "AuthFailed" => NetError::AuthFailed,
            "BadToken" => NetError::BadToken,
            "UnknownFile" => NetError::UnknownFile(detail),
            "PieceUnavailable" => NetError::PieceUnavailable(detail),
            code => NetError::Remote {
                code: code.to_string(),
                detail,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscoverySource {
    Multicast,
    Tracker,
    Dht,
    KnownHosts,
    SyncLogHistory,
}

impl fmt::Display for DiscoverySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscoverySource::Multicast => "multicast",
            DiscoverySource::Tracker => "tracker",
            DiscoverySource::Dht => "dht",
            DiscoverySource::KnownHosts => "known_hosts",
            DiscoverySource::SyncLogHistory => "sync_log_history",
        })
    }
}

/// A discovered peer. `last_seen_ms` is the simulation time of its latest
/// check-in or reply; history-derived records carry none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerRecord {
    pub peer_id: Option<PeerId>,
    pub addr: SocketAddrV4,
    pub last_seen_ms: Option<u64>,
    pub sources: BTreeSet<DiscoverySource>,
}

impl PeerRecord {
    pub fn new(peer_id: Option<PeerId>, addr: SocketAddrV4, source: DiscoverySource) -> PeerRecord {
        PeerRecord {
            peer_id,
            addr,
            last_seen_ms: None,
            sources: BTreeSet::from([source]),
        }
    }

    pub fn seen(mut self, at_ms: u64) -> PeerRecord {
        self.last_seen_ms = Some(at_ms);
        self
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    /// Folds `other` (same peer) into `self`.
    pub fn merge(&mut self, other: &PeerRecord) {
        self.sources.extend(other.sources.iter().copied());
        self.peer_id = self.peer_id.or(other.peer_id);
        self.last_seen_ms = match (self.last_seen_ms, other.last_seen_ms) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
    }
}

/// Merges records that share an address (and PeerID, when both know it).
pub fn merge_peer_records(records: impl IntoIterator<Item = PeerRecord>) -> Vec<PeerRecord> {
    let mut out: Vec<PeerRecord> = Vec::new();
    for r in records {
        let same = out.iter_mut().find(|o| {
            o.addr == r.addr
                && match (o.peer_id, r.peer_id) {
                    (Some(a), Some(b)) => a == b,
                    _ => true,
                }
        });
        match same {
            Some(o) => o.merge(&r),
            None => out.push(r),
        }
    }
    out.sort_by_key(|a| (a.addr, a.peer_id));
    out
}

pub(crate) fn encode_peers(peers: &[PeerRecord]) -> BValue {
    BValue::List(
        peers
            .iter()
            .map(|p| {
                DictBuilder::new()
                    .insert("ip", p.addr.ip().to_string().as_str())
                    .insert("port", i64::from(p.addr.port()))
                    .insert_opt("peer_id", p.peer_id.map(|id| id.as_bytes().to_vec()))
                    .insert_opt("last_seen", p.last_seen_ms.map(|t| t as i64))
                    .build()
            })
            .collect(),
    )
}

pub(crate) fn decode_peers(v: Option<&BValue>, source: DiscoverySource) -> Result<Vec<PeerRecord>, NetError> {
    let bad = |what: &str| NetError::Protocol(format!("peer list: {what}"));
    let Some(v) = v else {
        return Ok(Vec::new());
    };
    let list = v.as_list().ok_or_else(|| bad("not a list"))?;
    list.iter()
        .map(|p| {
            let ip: Ipv4Addr = p
                .get("ip")
                .and_then(BValue::as_str)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad ip"))?;
            let port = p
                .get("port")
                .and_then(BValue::as_int)
                .and_then(|n| u16::try_from(n).ok())
                .ok_or_else(|| bad("bad port"))?;
            let peer_id = p.get("peer_id").and_then(BValue::as_bytes).and_then(PeerId::from_slice);
            let mut rec = PeerRecord::new(peer_id, SocketAddrV4::new(ip, port), source);
            rec.last_seen_ms = p
                .get("last_seen")
                .and_then(BValue::as_int)
                .and_then(|t| u64::try_from(t).ok());
            Ok(rec)
        })
        .collect()
}
