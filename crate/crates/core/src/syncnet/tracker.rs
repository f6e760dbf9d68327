use std::collections::BTreeMap;
use std::net::SocketAddrV4;

use crate::identity::{PeerId, ShareId};

use super::{DiscoverySource, PeerRecord};

/// One peer's latest check-in for a share.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub peer_id: Option<PeerId>,
    pub addr: SocketAddrV4,
    pub last_checkin: u64,
}

impl Registration {
    /// Live while `last_checkin >= now - ttl`; expires once strictly older.
    pub fn is_live(&self, now: u64, ttl: u64) -> bool {
        self.last_checkin.saturating_add(ttl) >= now
    }

    pub fn to_record(&self, source: DiscoverySource) -> PeerRecord {
        PeerRecord::new(self.peer_id, self.addr, source).seen(self.last_checkin)
    }
}

/// Registrations for many shares with a common TTL. Used by both the tracker
/// and every DHT storage node.
#[derive(Debug, Clone, Default)]
pub struct TrackerState {
    pub registry: BTreeMap<ShareId, BTreeMap<SocketAddrV4, Registration>>,
    pub ttl_ms: u64,
}

impl TrackerState {
    pub fn new(ttl_ms: u64) -> TrackerState {
        TrackerState {
            registry: BTreeMap::new(),
            ttl_ms,
        }
    }

    pub fn register(&mut self, share: ShareId, peer_id: Option<PeerId>, addr: SocketAddrV4, now: u64) {
        self.registry.entry(share).or_default().insert(
            addr,
            Registration {
                peer_id,
                addr,
                last_checkin: now,
            },
        );
    }

    /// Live registrations for `share`, excluding `except`.
    pub fn query(&self, share: &ShareId, now: u64, except: Option<SocketAddrV4>) -> Vec<Registration> {
        self.registry
            .get(share)
            .into_iter()
            .flat_map(|m| m.values())
            .filter(|r| r.is_live(now, self.ttl_ms) && Some(r.addr) != except)
            .cloned()
            .collect()
    }

    /// Registers or refreshes the caller, then returns every other live peer.
    pub fn announce(&mut self, share: ShareId, peer_id: Option<PeerId>, addr: SocketAddrV4, now: u64) -> Vec<Registration> {
        self.register(share, peer_id, addr, now);
        self.query(&share, now, Some(addr))
    }
}
