use std::collections::BTreeSet;
use std::net::SocketAddrV4;

use serde::Serialize;

use crate::artifacts::LogEventKind;
use crate::identity::ShareId;
use crate::syncnet::{merge_peer_records, DiscoverySource, Network, NodeId, PeerRecord};

use super::disk::LocalEvidence;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Enumeration {
    pub peers: Vec<PeerRecord>,
    /// Per-method failures and skips.
    pub notes: Vec<String>,
}

/// Addresses the seized client itself used, from its own log.
pub(crate) fn local_addrs(evidence: Option<&LocalEvidence>) -> BTreeSet<SocketAddrV4> {
    evidence
        .and_then(|e| e.log.as_ref())
        .map(|log| {
            log.events
                .iter()
                .filter(|e| e.event == LogEventKind::SyncStart)
                .filter_map(|e| e.host.as_deref()?.parse().ok())
                .collect()
        })
        .unwrap_or_default()
}

/// Runs each enabled method from the investigator node `inv` and merges
/// the results by address and PeerID. `KnownHosts` and `SyncLogHistory`
/// read local evidence only; the history adds previously contacted peers
/// without a liveness claim. Addresses in `exclude` are dropped.
pub fn enumerate_peers(
    net: &mut Network,
    inv: NodeId,
    share: ShareId,
    methods: &BTreeSet<DiscoverySource>,
    evidence: Option<&LocalEvidence>,
    exclude: &BTreeSet<SocketAddrV4>,
) -> Enumeration {
    let mut found = Vec::new();
    let mut notes = Vec::new();
    for m in methods {
        let got = match m {
            DiscoverySource::Multicast => net.multicast_ping(inv, share),
            DiscoverySource::Tracker => net.tracker_query(inv, share),
            DiscoverySource::Dht => net.dht_get_peers(inv, share),
            DiscoverySource::KnownHosts => Ok(known_hosts(evidence, &share, &mut notes)),
            DiscoverySource::SyncLogHistory => Ok(log_history(evidence, &share)),
        };
        match got {
            Ok(p) => found.extend(p),
            Err(e) => notes.push(format!("{m}: {e}")),
        }
    }
    let local = local_addrs(evidence);
    let peers = merge_peer_records(found)
        .into_iter()
        .filter(|p| !exclude.contains(&p.addr) && !local.contains(&p.addr))
        .collect();
    Enumeration { peers, notes }
}

fn known_hosts(evidence: Option<&LocalEvidence>, share: &ShareId, notes: &mut Vec<String>) -> Vec<PeerRecord> {
    let Some(link) = evidence.and_then(|e| e.share(share)) else {
        return Vec::new();
    };
    link.config
        .known_hosts
        .iter()
        .filter_map(|h| match h.parse() {
            Ok(addr) => Some(PeerRecord::new(None, addr, DiscoverySource::KnownHosts)),
            Err(_) => {
                notes.push(format!("known_hosts: {h:?} is not address:port"));
                None
            }
        })
        .collect()
}

fn log_history(evidence: Option<&LocalEvidence>, share: &ShareId) -> Vec<PeerRecord> {
    let Some(log) = evidence.and_then(|e| e.log.as_ref()) else {
        return Vec::new();
    };
    log.events
        .iter()
        .filter(|e| e.share == Some(*share) && e.event != LogEventKind::SyncStart)
        .filter_map(|e| {
            let addr: SocketAddrV4 = e.host.as_deref()?.parse().ok()?;
            Some(PeerRecord::new(e.peer_id, addr, DiscoverySource::SyncLogHistory))
        })
        .collect()
}
