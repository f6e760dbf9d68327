use std::collections::BTreeSet;
use std::net::SocketAddrV4;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::artifacts::{parse_manifest, FileEntry, LogEvent, LogEventKind, ShareManifest};
use crate::bencode::{BValue, DictBuilder};
use crate::digest::Hash20;
use crate::identity::{AccessLevel, PeerId, Secret, ShareId};
use crate::integrity::verify_piece;

use super::clock::{EventHandle, SimClock};
use super::dht::{dht_closest, DHT_K};
use super::node::{Ctx, NodeState, Scope};
use super::tracker::TrackerState;
use super::transport::{InMemoryTransport, Transport};
use super::wire::{MessageKind, WireMessage};
use super::{decode_peers, encode_peers, merge_peer_records, DiscoverySource, NetError, PeerRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub seed: u64,
    /// Epoch seconds at simulation time zero.
    pub epoch_base: i64,
    /// Inclusive one-way latency range.
    pub latency_ms: (u64, u64),
    /// Time a sender waits before giving up on an unreachable address.
    pub timeout_ms: u64,
    pub tracker_addr: SocketAddrV4,
    /// Tracker and DHT registration lifetime.
    pub ttl_ms: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            seed: 0,
            epoch_base: 1_400_000_000,
            latency_ms: (5, 40),
            timeout_ms: 2_000,
            tracker_addr: SocketAddrV4::new([198, 51, 100, 1].into(), 3000),
            ttl_ms: 30 * 60_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub usize);

/// One datagram as seen by the bus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub seq: u64,
    pub t_ms: u64,
    pub from: SocketAddrV4,
    pub to: SocketAddrV4,
    pub kind: MessageKind,
    pub share: Option<ShareId>,
    pub peer_id: Option<PeerId>,
    pub len: usize,
    pub digest: Hash20,
    pub delivered: bool,
}

impl TraceEntry {
    fn to_bvalue(&self) -> BValue {
        DictBuilder::new()
            .insert("seq", self.seq as i64)
            .insert("t", self.t_ms as i64)
            .insert("from", self.from.to_string().as_str())
            .insert("to", self.to.to_string().as_str())
            .insert("kind", self.kind.as_str())
            .insert("len", self.len as i64)
            .insert("digest", self.digest.as_bytes().to_vec())
            .insert("delivered", i64::from(self.delivered))
            .build()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeAction {
    Sync { node: NodeId, share: ShareId },
    Delete { node: NodeId, share: ShareId, path: String },
    SecureDelete { node: NodeId, share: ShareId, path: String },
    ModifyOffline { node: NodeId, share: ShareId, path: String, bytes: Vec<u8> },
    GoOffline { node: NodeId },
    GoOnline { node: NodeId },
    Announce { node: NodeId, share: ShareId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetEvent {
    Checkin { node: NodeId, gen: u64 },
    Action(NodeAction),
}

/// An authenticated session with a remote node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionToken {
    pub server: SocketAddrV4,
    pub share: ShareId,
    pub token: Vec<u8>,
    pub scope: Scope,
    pub server_peer_id: Option<PeerId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SyncReport {
    pub peers_found: usize,
    pub peers_synced: Vec<SocketAddrV4>,
    pub downloaded: Vec<String>,
    pub deleted: Vec<String>,
    pub incomplete: Vec<String>,
    pub pieces_transferred: u64,
    pub failed_verifications: u64,
    /// No reachable peer offered the share.
    pub no_peers: bool,
    pub errors: Vec<String>,
}

struct Remote {
    token: SessionToken,
    manifest: ShareManifest,
}

enum Target {
    Tracker,
    Node(usize),
}

pub struct Network {
    clock: SimClock<NetEvent>,
    nodes: Vec<NodeState>,
    tracker: TrackerState,
    rng: ChaCha8Rng,
    transport: Box<dyn Transport>,
    trace: Vec<TraceEntry>,
    events: Vec<String>,
    config: NetConfig,
    dispatching: bool,
}

impl Network {
    pub fn new(config: NetConfig) -> Network {
        Network::with_transport(config, Box::new(InMemoryTransport))
    }

    pub fn with_transport(config: NetConfig, transport: Box<dyn Transport>) -> Network {
        Network {
            clock: SimClock::new(),
            nodes: Vec::new(),
            tracker: TrackerState::new(config.ttl_ms),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            transport,
            trace: Vec::new(),
            events: Vec::new(),
            config,
            dispatching: false,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn epoch_at(&self, t_ms: u64) -> i64 {
        self.config.epoch_base + (t_ms / 1000) as i64
    }

    pub fn epoch_now(&self) -> i64 {
        self.epoch_at(self.now())
    }

    pub fn transport_name(&self) -> &'static str {
        self.transport.name()
    }

    /// Adds a node. Online nodes check in immediately and then every
    /// `checkin_minutes`.
    pub fn add_node(&mut self, mut node: NodeState) -> NodeId {
        node.set_ttl(self.config.ttl_ms);
        let id = NodeId(self.nodes.len());
        let online = node.online;
        self.nodes.push(node);
        if online {
            self.schedule_checkin(id, 0);
        }
        id
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[id.0]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut NodeState {
        &mut self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &NodeState)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn find_node(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn node_at(&self, addr: SocketAddrV4) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.addr == addr).map(NodeId)
    }

    pub fn tracker(&self) -> &TrackerState {
        &self.tracker
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// Processed scheduler events, one line each.
    pub fn event_log(&self) -> &[String] {
        &self.events
    }

    /// SHA1 over every datagram and processed event, in order.
    pub fn trace_digest(&self) -> Hash20 {
        let mut buf = Vec::new();
        for t in &self.trace {
            buf.extend(t.to_bvalue().encode());
        }
        for e in &self.events {
            buf.extend(BValue::str(e).encode());
        }
        Hash20::of(&buf)
    }

    pub fn schedule(&mut self, at_ms: u64, action: NodeAction) -> EventHandle {
        self.clock.schedule_at(at_ms, NetEvent::Action(action))
    }

    fn schedule_checkin(&mut self, id: NodeId, delay: u64) {
        let gen = self.nodes[id.0].bump_checkin_gen();
        self.clock.schedule(delay, NetEvent::Checkin { node: id, gen });
    }

    /// Fires all events due at or before `t`; returns how many ran.
    pub fn run_until(&mut self, t: u64) -> usize {
        let outer = std::mem::replace(&mut self.dispatching, true);
        let mut n = 0;
        while let Some((h, e)) = self.clock.pop_due(t) {
            self.dispatch(h, e);
            n += 1;
        }
        self.clock.advance_to(t);
        self.dispatching = outer;
        n
    }

    /// Catches up on events that fell due while work advanced the clock.
    fn settle(&mut self) {
        if self.dispatching {
            return;
        }
        self.dispatching = true;
        while let Some((h, e)) = self.clock.pop_due(self.clock.now()) {
            self.dispatch(h, e);
        }
        self.dispatching = false;
    }

    fn dispatch(&mut self, h: EventHandle, event: NetEvent) {
        match event {
            NetEvent::Checkin { node, gen } => {
                let n = &self.nodes[node.0];
                if !n.online || n.checkin_gen != gen {
                    return;
                }
                self.events.push(format!("{} checkin {}", h.time, n.name));
                let shares: Vec<_> = n
                    .shares
                    .iter()
                    .map(|(id, s)| (*id, s.config.use_tracker, s.config.use_dht))
                    .collect();
                let now = self.now();
                self.nodes[node.0].expire_archive(now);
                for (share, tracker, dht) in shares {
                    if tracker {
                        let _ = self.tracker_announce(node, share);
                    }
                    if dht {
                        let _ = self.dht_announce(node, share);
                    }
                }
                let interval = self.nodes[node.0].settings.checkin_ms().max(1);
                self.clock
                    .schedule_at(h.time + interval, NetEvent::Checkin { node, gen });
            }
            NetEvent::Action(a) => {
                let line = format!("{} {:?}", h.time, a);
                let outcome = self.apply(a);
                self.events.push(match outcome {
                    Ok(s) => format!("{line} -> {s}"),
                    Err(e) => format!("{line} -> error: {e}"),
                });
            }
        }
    }

    /// Executes an action immediately.
    pub fn apply(&mut self, action: NodeAction) -> Result<String, NetError> {
        match action {
            NodeAction::Sync { node, share } => {
                let r = self.node_sync(node, share)?;
                Ok(format!(
                    "downloaded {:?} deleted {:?} pieces {}",
                    r.downloaded, r.deleted, r.pieces_transferred
                ))
            }
            NodeAction::Delete { node, share, path } => {
                self.delete_file(node, share, &path)?;
                Ok("deleted".into())
            }
            NodeAction::SecureDelete { node, share, path } => {
                self.secure_delete(node, share, &path)?;
                Ok("securely deleted".into())
            }
            NodeAction::ModifyOffline { node, share, path, bytes } => {
                self.modify_offline(node, share, &path, bytes)?;
                Ok("modified".into())
            }
            NodeAction::GoOffline { node } => {
                self.go_offline(node);
                Ok("offline".into())
            }
            NodeAction::GoOnline { node } => {
                self.go_online(node);
                Ok("online".into())
            }
            NodeAction::Announce { node, share } => {
                let peers = self.tracker_announce(node, share)?;
                let dht = self.dht_announce(node, share);
                Ok(format!("tracker peers {}, dht {}", peers.len(), dht.is_ok()))
            }
        }
    }

    pub fn go_offline(&mut self, id: NodeId) {
        let n = &mut self.nodes[id.0];
        n.online = false;
        n.bump_checkin_gen();
    }

    pub fn go_online(&mut self, id: NodeId) {
        if !self.nodes[id.0].online {
            self.nodes[id.0].online = true;
            self.schedule_checkin(id, 0);
        }
    }

    pub fn delete_file(&mut self, id: NodeId, share: ShareId, path: &str) -> Result<(), NetError> {
        let (now, epoch) = (self.now(), self.epoch_now());
        self.nodes[id.0].delete_file(&share, path, now, epoch)
    }

    pub fn secure_delete(&mut self, id: NodeId, share: ShareId, path: &str) -> Result<(), NetError> {
        let (now, epoch) = (self.now(), self.epoch_now());
        self.nodes[id.0].secure_delete(&share, path, now, epoch)
    }

    pub fn modify_offline(&mut self, id: NodeId, share: ShareId, path: &str, bytes: Vec<u8>) -> Result<(), NetError> {
        let epoch = self.epoch_now();
        self.nodes[id.0].modify_offline(&share, path, bytes, epoch)
    }

    fn check_online(&self, id: NodeId) -> Result<(), NetError> {
        let n = self.nodes.get(id.0).ok_or_else(|| NetError::UnknownNode(format!("#{}", id.0)))?;
        if n.online {
            Ok(())
        } else {
            Err(NetError::NodeOffline(n.name.clone()))
        }
    }

    fn latency(&mut self) -> u64 {
        let (lo, hi) = self.config.latency_ms;
        self.rng.gen_range(lo..=hi.max(lo))
    }

    /// Puts one datagram on the bus and returns it as received.
    fn transmit(&mut self, from: SocketAddrV4, to: SocketAddrV4, msg: &WireMessage, delivered: bool) -> Result<WireMessage, NetError> {
        let bytes = msg.encode();
        self.trace.push(TraceEntry {
            seq: self.trace.len() as u64,
            t_ms: self.now(),
            from,
            to,
            kind: msg.kind,
            share: msg.share(),
            peer_id: msg.peer_id(),
            len: bytes.len(),
            digest: Hash20::of(&bytes),
            delivered,
        });
        if !delivered {
            self.clock.advance(self.config.timeout_ms);
            return Err(NetError::Unreachable(to));
        }
        let received = self.transport.carry(from, to, &bytes)?;
        let lat = self.latency();
        self.clock.advance(lat);
        WireMessage::decode(&received)
    }

    fn target(&self, to: SocketAddrV4) -> Option<Target> {
        if to == self.config.tracker_addr {
            return Some(Target::Tracker);
        }
        self.nodes
            .iter()
            .position(|n| n.addr == to && n.online)
            .map(Target::Node)
    }

    /// Request/response exchange between `from` and the node or tracker at
    /// `to`. ERROR replies become the matching [`NetError`].
    fn rpc(&mut self, from: NodeId, to: SocketAddrV4, msg: WireMessage) -> Result<WireMessage, NetError> {
        self.settle();
        self.check_online(from)?;
        let src = self.nodes[from.0].addr;
        let target = self.target(to);
        let req = self.transmit(src, to, &msg, target.is_some())?;
        let reply = match target.expect("delivered implies a target") {
            Target::Tracker => self.tracker_handle(src, &req),
            Target::Node(i) => {
                let (now, epoch) = (self.now(), self.epoch_now());
                let mut ctx = Ctx {
                    now,
                    epoch,
                    rng: &mut self.rng,
                };
                self.nodes[i].handle(src, &req, &mut ctx)
            }
        }
        .ok_or_else(|| NetError::Protocol(format!("{} sent no reply", to)))?;
        let reply = self.transmit(to, src, &reply, true)?;
        if reply.kind == MessageKind::Error {
            return Err(NetError::from_wire(&reply));
        }
        Ok(reply)
    }

    fn expect(reply: &WireMessage, kind: MessageKind) -> Result<(), NetError> {
        if reply.kind == kind {
            Ok(())
        } else {
            Err(NetError::Protocol(format!("expected {kind}, got {}", reply.kind)))
        }
    }

    fn tracker_handle(&mut self, from: SocketAddrV4, msg: &WireMessage) -> Option<WireMessage> {
        let share = msg.share()?;
        if msg.kind != MessageKind::TrackerAnnounce {
            return Some(WireMessage::error(Some(&share), "ProtocolError", "tracker accepts announces only"));
        }
        let now = self.now();
        let regs = if msg.int("query") == Some(1) {
            self.tracker.query(&share, now, Some(from))
        } else {
            self.tracker.announce(share, msg.peer_id(), from, now)
        };
        let peers: Vec<_> = regs.iter().map(|r| r.to_record(DiscoverySource::Tracker)).collect();
        Some(WireMessage::new(MessageKind::TrackerResponse, Some(&share)).with("peers", encode_peers(&peers)))
    }

    fn announce_msg(&self, id: NodeId, kind: MessageKind, share: &ShareId) -> WireMessage {
        let n = &self.nodes[id.0];
        WireMessage::new(kind, Some(share))
            .with("peer_id", n.peer_id.as_bytes().to_vec())
            .with("port", i64::from(n.addr.port()))
    }

    /// Registers `id` with the tracker and returns the other live peers.
    pub fn tracker_announce(&mut self, id: NodeId, share: ShareId) -> Result<Vec<PeerRecord>, NetError> {
        let msg = self.announce_msg(id, MessageKind::TrackerAnnounce, &share);
        let to = self.config.tracker_addr;
        let reply = self.rpc(id, to, msg)?;
        Self::expect(&reply, MessageKind::TrackerResponse)?;
        decode_peers(reply.get("peers"), DiscoverySource::Tracker)
    }

    /// Asks the tracker for live peers without registering.
    pub fn tracker_query(&mut self, id: NodeId, share: ShareId) -> Result<Vec<PeerRecord>, NetError> {
        let msg = self.announce_msg(id, MessageKind::TrackerAnnounce, &share).with("query", 1);
        let to = self.config.tracker_addr;
        let reply = self.rpc(id, to, msg)?;
        Self::expect(&reply, MessageKind::TrackerResponse)?;
        decode_peers(reply.get("peers"), DiscoverySource::Tracker)
    }

    /// The K online DHT participants XOR-closest to `share`.
    pub fn dht_storage_nodes(&self, share: &ShareId) -> Vec<NodeId> {
        let candidates: Vec<(PeerId, NodeId)> = self
            .nodes()
            .filter(|(_, n)| n.online && n.dht_participant)
            .map(|(id, n)| (n.peer_id, id))
            .collect();
        dht_closest(share, &candidates, DHT_K)
    }

    pub fn dht_announce(&mut self, id: NodeId, share: ShareId) -> Result<(), NetError> {
        self.settle();
        self.check_online(id)?;
        let storage = self.dht_storage_nodes(&share);
        let mut stored = false;
        for s in storage {
            let msg = self.announce_msg(id, MessageKind::DhtAnnounce, &share);
            let to = self.nodes[s.0].addr;
            stored |= self.rpc(id, to, msg).is_ok();
        }
        if stored {
            Ok(())
        } else {
            Err(NetError::NoReachableStorageNodes)
        }
    }

    /// Live peers stored for `share` at its storage nodes (the caller
    /// included, if it announced).
    pub fn dht_get_peers(&mut self, id: NodeId, share: ShareId) -> Result<Vec<PeerRecord>, NetError> {
        self.settle();
        self.check_online(id)?;
        let storage = self.dht_storage_nodes(&share);
        let mut reached = false;
        let mut found = Vec::new();
        for s in storage {
            let to = self.nodes[s.0].addr;
            let msg = WireMessage::new(MessageKind::DhtGetPeers, Some(&share));
            if let Ok(reply) = self.rpc(id, to, msg) {
                reached = true;
                found.extend(decode_peers(reply.get("peers"), DiscoverySource::Dht)?);
            }
        }
        if !reached {
            return Err(NetError::NoReachableStorageNodes);
        }
        Ok(merge_peer_records(found))
    }

    /// Pings every other online node in `id`'s LAN domain; holders of the
    /// share answer.
    pub fn multicast_ping(&mut self, id: NodeId, share: ShareId) -> Result<Vec<PeerRecord>, NetError> {
        self.settle();
        self.check_online(id)?;
        let src = self.nodes[id.0].addr;
        let lan = self.nodes[id.0].lan.clone();
        let recipients: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| i != id.0 && self.nodes[i].online && self.nodes[i].lan == lan)
            .collect();
        let ping = self.announce_msg(id, MessageKind::MulticastPing, &share);
        let mut found = Vec::new();
        for i in recipients {
            let to = self.nodes[i].addr;
            let req = self.transmit(src, to, &ping, true)?;
            let (now, epoch) = (self.now(), self.epoch_now());
            let mut ctx = Ctx {
                now,
                epoch,
                rng: &mut self.rng,
            };
            if let Some(hello) = self.nodes[i].handle(src, &req, &mut ctx) {
                let hello = self.transmit(to, src, &hello, true)?;
                if hello.kind == MessageKind::Hello {
                    let at = self.now();
                    found.push(PeerRecord::new(hello.peer_id(), to, DiscoverySource::Multicast).seen(at));
                }
            }
        }
        Ok(found)
    }

    /// HELLO / CHALLENGE / AUTH against `server`.
    pub fn session_handshake(
        &mut self,
        id: NodeId,
        server: SocketAddrV4,
        share: ShareId,
        secret: &Secret,
    ) -> Result<SessionToken, NetError> {
        let hello = self.announce_msg(id, MessageKind::Hello, &share);
        let challenge = self.rpc(id, server, hello)?;
        Self::expect(&challenge, MessageKind::Challenge)?;
        let nonce = challenge.require_bytes("nonce")?.to_vec();
        let level = challenge
            .bytes("level")
            .and_then(|b| b.first().copied())
            .and_then(AccessLevel::from_byte);
        let proof = NodeState::auth_proof(secret, &nonce, level);
        let auth = WireMessage::new(MessageKind::Auth, Some(&share)).with("proof", proof.as_bytes().to_vec());
        let granted = self.rpc(id, server, auth)?;
        Self::expect(&granted, MessageKind::Auth)?;
        let scope = match granted.text("scope") {
            Some("bidirectional") => Scope::Bidirectional,
            _ => Scope::Download,
        };
        Ok(SessionToken {
            server,
            share,
            token: granted.require_bytes("token")?.to_vec(),
            scope,
            server_peer_id: challenge.peer_id().or(granted.peer_id()),
        })
    }

    pub fn fetch_manifest(&mut self, id: NodeId, session: &SessionToken) -> Result<ShareManifest, NetError> {
        let req = WireMessage::new(MessageKind::ManifestRequest, Some(&session.share))
            .with("token", session.token.clone());
        let reply = self.rpc(id, session.server, req)?;
        Self::expect(&reply, MessageKind::ManifestResponse)?;
        let manifest = parse_manifest(reply.require_bytes("manifest")?)?;
        if manifest.share_id != session.share {
            return Err(NetError::Protocol("manifest for a different share".into()));
        }
        Ok(manifest)
    }

    /// Requests one piece. The caller verifies it.
    pub fn fetch_piece(&mut self, id: NodeId, session: &SessionToken, path: &str, index: u64) -> Result<Vec<u8>, NetError> {
        let req = WireMessage::new(MessageKind::PieceRequest, Some(&session.share))
            .with("token", session.token.clone())
            .with("path", path)
            .with("index", index as i64);
        let reply = self.rpc(id, session.server, req)?;
        Self::expect(&reply, MessageKind::PieceResponse)?;
        if reply.text("path") != Some(path) || reply.int("index") != Some(index as i64) {
            return Err(NetError::Protocol("piece response does not match request".into()));
        }
        Ok(reply.require_bytes("data")?.to_vec())
    }

    fn sync_event(&self, kind: LogEventKind, share: ShareId) -> LogEvent {
        let mut ev = LogEvent::new(self.epoch_now(), kind);
        ev.share = Some(share);
        ev
    }

    /// Discovers peers with the share's enabled methods, exchanges manifests
    /// and pulls anything newer, piece by verified piece.
    pub fn node_sync(&mut self, id: NodeId, share: ShareId) -> Result<SyncReport, NetError> {
        self.settle();
        self.check_online(id)?;
        let node = &self.nodes[id.0];
        let st = node.share(&share).ok_or(NetError::UnknownShare)?;
        let cfg = st.config.clone();
        let secret = st.secret.clone();
        let self_addr = node.addr;
        let mut ev = self.sync_event(LogEventKind::SyncStart, share);
        ev.host = Some(self_addr.to_string());
        self.nodes[id.0].push_log(ev);

        let mut report = SyncReport::default();
        let mut found = Vec::new();
        if cfg.use_lan_broadcast {
            found.extend(self.multicast_ping(id, share)?);
        }
        if cfg.use_tracker {
            match self.tracker_announce(id, share) {
                Ok(p) => found.extend(p),
                Err(e) => report.errors.push(format!("tracker: {e}")),
            }
        }
        if cfg.use_dht {
            let _ = self.dht_announce(id, share);
            match self.dht_get_peers(id, share) {
                Ok(p) => found.extend(p),
                Err(e) => report.errors.push(format!("dht: {e}")),
            }
        }
        if cfg.use_known_hosts {
            for h in &cfg.known_hosts {
                match h.parse::<SocketAddrV4>() {
                    Ok(addr) => found.push(PeerRecord::new(None, addr, DiscoverySource::KnownHosts)),
                    Err(_) => report.errors.push(format!("known host {h:?} is not address:port")),
                }
            }
        }
        let peers: Vec<PeerRecord> = merge_peer_records(found)
            .into_iter()
            .filter(|p| p.addr != self_addr)
            .collect();
        let addrs: BTreeSet<SocketAddrV4> = peers.iter().map(|p| p.addr).collect();
        report.peers_found = addrs.len();

        let mut remotes = Vec::new();
        for addr in addrs {
            let session = match self.session_handshake(id, addr, share, &secret) {
                Ok(s) => s,
                Err(e) => {
                    report.errors.push(format!("{addr}: {e}"));
                    continue;
                }
            };
            match self.fetch_manifest(id, &session) {
                Ok(manifest) => {
                    let mut ev = self.sync_event(LogEventKind::PeerConnect, share);
                    ev.peer_id = session.server_peer_id;
                    ev.host = Some(addr.to_string());
                    self.nodes[id.0].push_log(ev);
                    report.peers_synced.push(addr);
                    remotes.push(Remote {
                        token: session,
                        manifest,
                    });
                }
                Err(e) => report.errors.push(format!("{addr}: {e}")),
            }
        }
        if remotes.is_empty() {
            report.no_peers = true;
            return Ok(report);
        }

        let paths: BTreeSet<String> = remotes
            .iter()
            .flat_map(|r| r.manifest.files.iter().map(|f| f.path.clone()))
            .collect();
        for path in paths {
            let Some(winner) = remotes
                .iter()
                .filter_map(|r| r.manifest.entry(&path))
                .filter(|e| !e.invalidated)
                .max_by(|a, b| (a.mtime, a.state, a.hash20).cmp(&(b.mtime, b.state, b.hash20)))
                .cloned()
            else {
                continue;
            };
            let local = self.nodes[id.0].share(&share).and_then(|s| s.manifest.entry(&path)).cloned();
            if local.as_ref().is_some_and(|l| l.invalidated) {
                continue;
            }
            if winner.is_deleted() {
                if let Some(l) = local.filter(|l| l.is_present() && l.mtime <= winner.mtime) {
                    let now = self.now();
                    self.nodes[id.0].apply_remote_delete(&share, &winner, now)?;
                    let mut ev = self.sync_event(LogEventKind::Delete, share);
                    ev.peer_id = winner.peer;
                    ev.path = Some(l.path);
                    self.nodes[id.0].push_log(ev);
                    report.deleted.push(path.clone());
                }
                continue;
            }
            let wanted = match &local {
                None => true,
                Some(l) if l.is_deleted() => winner.mtime > l.mtime,
                Some(l) => l.hash20 != winner.hash20 && winner.mtime > l.mtime,
            };
            if wanted {
                self.download(id, share, &winner, &remotes, &mut report)?;
            }
        }

        let epoch = self.epoch_now();
        let st = self.nodes[id.0].share_mut(&share)?;
        for r in &remotes {
            if let Some(pid) = r.token.server_peer_id {
                st.config.record_peer(pid, epoch);
            }
        }
        Ok(report)
    }

    fn download(
        &mut self,
        id: NodeId,
        share: ShareId,
        winner: &FileEntry,
        remotes: &[Remote],
        report: &mut SyncReport,
    ) -> Result<(), NetError> {
        let path = &winner.path;
        let sources: Vec<&Remote> = remotes
            .iter()
            .filter(|r| {
                r.manifest
                    .entry(path)
                    .is_some_and(|e| e.is_present() && !e.invalidated && e.hash20 == winner.hash20)
            })
            .collect();
        let Some(meta) = sources.iter().find_map(|r| r.manifest.meta(path)).cloned() else {
            report.incomplete.push(path.clone());
            return Ok(());
        };
        let mut bytes = Vec::with_capacity(meta.size as usize);
        let mut first_source = None;
        for index in 0..meta.piece_count() {
            let mut got = None;
            for s in &sources {
                match self.fetch_piece(id, &s.token, path, index) {
                    Ok(data) if verify_piece(&data, index, &meta) == Ok(true) => {
                        got = Some(data);
                        first_source.get_or_insert(&s.token);
                        break;
                    }
                    Ok(_) => report.failed_verifications += 1,
                    Err(_) => {}
                }
            }
            match got {
                Some(d) => {
                    report.pieces_transferred += 1;
                    bytes.extend(d);
                }
                None => {
                    report.incomplete.push(path.clone());
                    return Ok(());
                }
            }
        }
        if Hash20::of(&bytes) != winner.hash20 {
            report.incomplete.push(path.clone());
            return Ok(());
        }
        let src = first_source.or_else(|| sources.first().map(|s| &s.token));
        let mut entry = winner.clone();
        entry.peer = entry.peer.or(src.and_then(|s| s.server_peer_id));
        self.nodes[id.0].install(&share, entry, meta, bytes)?;
        let mut ev = self.sync_event(LogEventKind::Download, share);
        ev.peer_id = src.and_then(|s| s.server_peer_id);
        ev.host = src.map(|s| s.server.to_string());
        ev.path = Some(path.clone());
        self.nodes[id.0].push_log(ev);
        report.downloaded.push(path.clone());
        Ok(())
    }
}
