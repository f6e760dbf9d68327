use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddrV4;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    write_manifest, FileEntry, FileMeta, LogEvent, LogEventKind, OsProfile, Settings, ShareManifest,
    SyncDatConfig, STATE_DELETED, STATE_PRESENT,
};
use crate::bencode::BValue;
use crate::digest::Hash20;
use crate::identity::{AccessLevel, PeerId, Secret, ShareId};
use crate::integrity::index_file;

use super::tracker::TrackerState;
use super::wire::{MessageKind, WireMessage};
use super::{encode_peers, DiscoverySource, NetError};

/// Misbehaviour injected into a node's piece responses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByzantineConfig {
    /// Piece indices to corrupt; `None` corrupts every piece.
    #[serde(default)]
    pub corrupt_pieces: Option<BTreeSet<u64>>,
    /// How many responses to corrupt before behaving; `None` is forever.
    #[serde(default)]
    pub times: Option<u32>,
}

/// File content held by a node. `held` lists the pieces present when the
/// node has only part of the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredFile {
    pub bytes: Vec<u8>,
    pub held: Option<BTreeSet<u64>>,
}

impl StoredFile {
    pub fn holds(&self, index: u64) -> bool {
        self.held.as_ref().is_none_or(|h| h.contains(&index))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchivedFile {
    pub bytes: Vec<u8>,
    pub meta: FileMeta,
    pub expires_ms: u64,
}

#[derive(Debug, Clone)]
pub struct ShareState {
    pub secret: Secret,
    pub manifest: ShareManifest,
    pub content: BTreeMap<String, StoredFile>,
    pub archive: BTreeMap<String, ArchivedFile>,
    pub config: SyncDatConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Download,
    Bidirectional,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Download => "download",
            Scope::Bidirectional => "bidirectional",
        }
    }
}

#[derive(Debug, Clone)]
struct Session {
    share: ShareId,
    #[allow(dead_code)]
    scope: Scope,
    client: SocketAddrV4,
    client_id: Option<PeerId>,
    uploads: BTreeSet<String>,
}

#[derive(Debug, Clone)]
struct Challenge {
    nonce: [u8; 16],
    client_id: Option<PeerId>,
}

/// Per-request context handed to a node by the scheduler.
pub(crate) struct Ctx<'a> {
    pub now: u64,
    pub epoch: i64,
    pub rng: &'a mut dyn RngCore,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub name: String,
    pub peer_id: PeerId,
    pub addr: SocketAddrV4,
    pub lan: String,
    pub os: OsProfile,
    pub user: String,
    pub online: bool,
    /// Whether the node serves as DHT storage. Investigator nodes do not.
    pub dht_participant: bool,
    pub settings: Settings,
    pub shares: BTreeMap<ShareId, ShareState>,
    pub log: Vec<LogEvent>,
    pub byzantine: Option<ByzantineConfig>,
    pub(crate) checkin_gen: u64,
    dht_store: TrackerState,
    sessions: BTreeMap<[u8; 16], Session>,
    challenges: BTreeMap<(SocketAddrV4, ShareId), Challenge>,
}

fn proof(nonce: &[u8], secret: &Secret) -> Hash20 {
    let mut buf = nonce.to_vec();
    buf.extend_from_slice(&secret.to_bytes());
    Hash20::of(&buf)
}

impl NodeState {
    pub fn new(name: impl Into<String>, peer_id: PeerId, addr: SocketAddrV4, lan: impl Into<String>) -> NodeState {
        NodeState {
            name: name.into(),
            peer_id,
            addr,
            lan: lan.into(),
            os: OsProfile::default(),
            user: "user".into(),
            online: true,
            dht_participant: true,
            settings: Settings::default(),
            shares: BTreeMap::new(),
            log: Vec::new(),
            byzantine: None,
            checkin_gen: 0,
            dht_store: TrackerState::new(Settings::default().checkin_ms()),
            sessions: BTreeMap::new(),
            challenges: BTreeMap::new(),
        }
    }

    pub(crate) fn set_ttl(&mut self, ttl_ms: u64) {
        self.dht_store.ttl_ms = ttl_ms;
    }

    /// Adds a share with a default configuration; returns its ShareID.
    pub fn add_share(&mut self, secret: Secret, folder: impl Into<String>) -> Result<ShareId, NetError> {
        let id = secret
            .share_id()
            .map_err(|e| NetError::Protocol(format!("secret: {e}")))?;
        let mut manifest = ShareManifest::new(id);
        manifest.peer_id = Some(self.peer_id);
        let config = SyncDatConfig::new(folder, secret.clone());
        self.shares.insert(
            id,
            ShareState {
                secret,
                manifest,
                content: BTreeMap::new(),
                archive: BTreeMap::new(),
                config,
            },
        );
        Ok(id)
    }

    pub fn share(&self, id: &ShareId) -> Option<&ShareState> {
        self.shares.get(id)
    }

    pub fn share_mut(&mut self, id: &ShareId) -> Result<&mut ShareState, NetError> {
        self.shares.get_mut(id).ok_or(NetError::UnknownShare)
    }

    /// Places `bytes` at `path` as a locally authored file. With `held`,
    /// only those pieces are kept.
    pub fn add_file(
        &mut self,
        share: &ShareId,
        path: &str,
        bytes: Vec<u8>,
        held: Option<BTreeSet<u64>>,
        epoch: i64,
    ) -> Result<(), NetError> {
        let piece_len = self.settings.piece_len;
        let peer = self.peer_id;
        let st = self.share_mut(share)?;
        let index = index_file(&bytes, piece_len).map_err(|e| NetError::Protocol(e.to_string()))?;
        let entry = FileEntry {
            path: path.to_string(),
            size: bytes.len() as u64,
            mtime: epoch,
            state: STATE_PRESENT,
            invalidated: false,
            hash20: index.whole_file_hash,
            peer: Some(peer),
            extra: Default::default(),
        };
        st.manifest.upsert(entry, Some(index.to_meta(path)));
        st.content.insert(path.to_string(), StoredFile { bytes, held });
        Ok(())
    }

    fn log_event(&mut self, ev: LogEvent) {
        self.log.push(ev);
    }

    fn local_event(&self, epoch: i64, kind: LogEventKind, share: &ShareId, path: &str) -> LogEvent {
        let mut ev = LogEvent::new(epoch, kind);
        ev.share = Some(*share);
        ev.path = Some(path.to_string());
        ev
    }

    fn present_entry(&mut self, share: &ShareId, path: &str) -> Result<&mut ShareState, NetError> {
        let st = self.share_mut(share)?;
        match st.manifest.entry(path) {
            Some(e) if e.is_present() && !e.invalidated => Ok(st),
            _ => Err(NetError::UnknownFile(path.to_string())),
        }
    }

    /// Deletes a file locally. A node that can write the share records the
    /// deletion (`state=2`) so it propagates; a read-only node cannot, so
    /// its entry is invalidated and frozen instead. Content moves to the
    /// archive when archiving is enabled.
    pub fn delete_file(&mut self, share: &ShareId, path: &str, now: u64, epoch: i64) -> Result<(), NetError> {
        let archive_ms = self.settings.sync_archive_enabled.then(|| self.settings.archive_ms());
        let st = self.present_entry(share, path)?;
        let writable = st.secret.level() == AccessLevel::Master;
        let stored = st.content.remove(path);
        if let (Some(ms), Some(stored), Some(meta)) = (archive_ms, stored, st.manifest.meta(path)) {
            st.archive.insert(
                path.to_string(),
                ArchivedFile {
                    bytes: stored.bytes,
                    meta: meta.clone(),
                    expires_ms: now.saturating_add(ms),
                },
            );
        }
        let e = st.manifest.entry_mut(path).expect("checked above");
        e.mtime = epoch;
        let kind = if writable {
            e.state = STATE_DELETED;
            LogEventKind::Delete
        } else {
            e.invalidated = true;
            LogEventKind::Invalidate
        };
        let ev = self.local_event(epoch, kind, share, path);
        self.log_event(ev);
        Ok(())
    }

    /// Like [`delete_file`](Self::delete_file) but nothing survives: the
    /// content and any archive copy are destroyed.
    pub fn secure_delete(&mut self, share: &ShareId, path: &str, now: u64, epoch: i64) -> Result<(), NetError> {
        self.delete_file(share, path, now, epoch)?;
        let st = self.share_mut(share)?;
        st.archive.remove(path);
        st.content.remove(path);
        Ok(())
    }

    /// Rewrites content without syncing it. The entry is invalidated and
    /// `hash20` keeps the last valid version's hash.
    pub fn modify_offline(
        &mut self,
        share: &ShareId,
        path: &str,
        bytes: Vec<u8>,
        epoch: i64,
    ) -> Result<(), NetError> {
        let st = self.present_entry(share, path)?;
        st.content.insert(path.to_string(), StoredFile { bytes, held: None });
        let e = st.manifest.entry_mut(path).expect("checked above");
        e.invalidated = true;
        e.mtime = epoch;
        let ev = self.local_event(epoch, LogEventKind::Invalidate, share, path);
        self.log_event(ev);
        Ok(())
    }

    /// Applies a deletion learned from a peer: the local entry takes the
    /// remote tombstone and content moves to the archive when enabled.
    pub(crate) fn apply_remote_delete(&mut self, share: &ShareId, remote: &FileEntry, now: u64) -> Result<(), NetError> {
        let archive_ms = self.settings.sync_archive_enabled.then(|| self.settings.archive_ms());
        let st = self.share_mut(share)?;
        let stored = st.content.remove(&remote.path);
        if let (Some(ms), Some(stored), Some(meta)) = (archive_ms, stored, st.manifest.meta(&remote.path)) {
            st.archive.insert(
                remote.path.clone(),
                ArchivedFile {
                    bytes: stored.bytes,
                    meta: meta.clone(),
                    expires_ms: now.saturating_add(ms),
                },
            );
        }
        st.manifest.upsert(remote.clone(), None);
        Ok(())
    }

    /// Installs a verified download.
    pub(crate) fn install(&mut self, share: &ShareId, entry: FileEntry, meta: FileMeta, bytes: Vec<u8>) -> Result<(), NetError> {
        let st = self.share_mut(share)?;
        st.archive.remove(&entry.path);
        st.content.insert(entry.path.clone(), StoredFile { bytes, held: None });
        st.manifest.upsert(entry, Some(meta));
        Ok(())
    }

    pub(crate) fn push_log(&mut self, ev: LogEvent) {
        self.log_event(ev);
    }

    pub(crate) fn bump_checkin_gen(&mut self) -> u64 {
        self.checkin_gen += 1;
        self.checkin_gen
    }

    /// Drops archive copies whose retention has lapsed.
    pub fn expire_archive(&mut self, now: u64) {
        for st in self.shares.values_mut() {
            st.archive.retain(|_, a| a.expires_ms > now);
        }
    }

    /// Bytes of piece `index` of `path`, as this node would serve them.
    fn piece_bytes(&self, share: &ShareId, path: &str, index: u64, now: u64) -> Result<Vec<u8>, NetError> {
        let st = self.shares.get(share).ok_or(NetError::UnknownShare)?;
        let unavailable = |why: &str| NetError::PieceUnavailable(format!("{path}#{index}: {why}"));
        let entry = st.manifest.entry(path);
        let (bytes, meta) = match entry {
            None => return Err(NetError::UnknownFile(path.to_string())),
            Some(e) if e.invalidated => return Err(unavailable("local copy invalidated")),
            Some(e) if e.is_deleted() => match st.archive.get(path) {
                Some(a) if a.expires_ms > now => (&a.bytes, &a.meta),
                _ => return Err(unavailable("deleted")),
            },
            Some(_) => {
                let stored = st.content.get(path).ok_or_else(|| unavailable("content missing"))?;
                if !stored.holds(index) {
                    return Err(unavailable("piece never held"));
                }
                let meta = st.manifest.meta(path).ok_or_else(|| unavailable("no piece metadata"))?;
                (&stored.bytes, meta)
            }
        };
        let len = meta.piece_length(index).ok_or_else(|| unavailable("index out of range"))?;
        let start = index * meta.piece_len;
        let (start, end) = (start as usize, (start + len) as usize);
        bytes
            .get(start..end)
            .map(<[u8]>::to_vec)
            .ok_or_else(|| unavailable("content shorter than metadata"))
    }

    fn corrupt(&mut self, index: u64, data: &mut [u8]) {
        let Some(b) = self.byzantine.as_mut() else {
            return;
        };
        let targeted = b.corrupt_pieces.as_ref().is_none_or(|p| p.contains(&index));
        let budget = b.times.is_none_or(|t| t > 0);
        if !targeted || !budget || data.is_empty() {
            return;
        }
        if let Some(t) = b.times.as_mut() {
            *t -= 1;
        }
        data[0] ^= 0xFF;
    }

    fn session(&self, msg: &WireMessage) -> Result<(&[u8; 16], &Session), NetError> {
        let share = msg.share().ok_or(NetError::BadToken)?;
        let token = msg.bytes("token").ok_or(NetError::BadToken)?;
        let (k, s) = self
            .sessions
            .get_key_value(token)
            .ok_or(NetError::BadToken)?;
        if s.share != share {
            return Err(NetError::BadToken);
        }
        Ok((k, s))
    }

    /// Handles one inbound message. `None` means no reply is sent.
    pub(crate) fn handle(&mut self, from: SocketAddrV4, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Option<WireMessage> {
        let share = msg.share();
        let reply = match msg.kind {
            MessageKind::MulticastPing => {
                let s = share?;
                if !self.shares.contains_key(&s) || from == self.addr {
                    return None;
                }
                Ok(WireMessage::new(MessageKind::Hello, Some(&s))
                    .with("peer_id", self.peer_id.as_bytes().to_vec())
                    .with("port", i64::from(self.addr.port())))
            }
            MessageKind::Hello => self.on_hello(from, msg, ctx),
            MessageKind::Auth => self.on_auth(from, msg, ctx),
            MessageKind::ManifestRequest => self.session(msg).map(|(_, s)| {
                let st = &self.shares[&s.share];
                WireMessage::new(MessageKind::ManifestResponse, Some(&s.share))
                    .with("manifest", write_manifest(&st.manifest))
            }),
            MessageKind::PieceRequest => self.on_piece(msg, ctx),
            MessageKind::DhtAnnounce => share
                .ok_or(NetError::UnknownShare)
                .map(|s| {
                    self.dht_store.register(s, msg.peer_id(), from, ctx.now);
                    WireMessage::new(MessageKind::DhtPeers, Some(&s)).with("peers", BValue::List(vec![]))
                }),
            MessageKind::DhtGetPeers => share.ok_or(NetError::UnknownShare).map(|s| {
                let peers: Vec<_> = self
                    .dht_store
                    .query(&s, ctx.now, None)
                    .iter()
                    .map(|r| r.to_record(DiscoverySource::Dht))
                    .collect();
                WireMessage::new(MessageKind::DhtPeers, Some(&s)).with("peers", encode_peers(&peers))
            }),
            other => Err(NetError::Protocol(format!("{other} not accepted by peers"))),
        };
        Some(reply.unwrap_or_else(|e| error_reply(share.as_ref(), &e)))
    }

    fn on_hello(&mut self, from: SocketAddrV4, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Result<WireMessage, NetError> {
        let Some(share) = msg.share() else {
            return Ok(WireMessage::new(MessageKind::Hello, None)
                .with("peer_id", self.peer_id.as_bytes().to_vec())
                .with("port", i64::from(self.addr.port())));
        };
        let st = self.shares.get(&share).ok_or(NetError::UnknownShare)?;
        let level = st.secret.level();
        let mut nonce = [0u8; 16];
        ctx.rng.fill_bytes(&mut nonce);
        self.challenges.insert(
            (from, share),
            Challenge {
                nonce,
                client_id: msg.peer_id(),
            },
        );
        Ok(WireMessage::new(MessageKind::Challenge, Some(&share))
            .with("nonce", nonce.to_vec())
            .with("level", vec![level.byte()])
            .with("peer_id", self.peer_id.as_bytes().to_vec()))
    }

    fn on_auth(&mut self, from: SocketAddrV4, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Result<WireMessage, NetError> {
        let share = msg.share().ok_or(NetError::UnknownShare)?;
        let st = self.shares.get(&share).ok_or(NetError::UnknownShare)?;
        let challenge = self.challenges.remove(&(from, share)).ok_or(NetError::AuthFailed)?;
        let presented = msg.bytes("proof").ok_or(NetError::AuthFailed)?;
        let mut accepted = vec![(st.secret.clone(), Scope::Bidirectional)];
        if st.secret.level() == AccessLevel::Master {
            if let Ok(ro) = st.secret.derive_readonly() {
                accepted.push((ro, Scope::Download));
            }
        } else {
            accepted[0].1 = Scope::Download;
        }
        let scope = accepted
            .iter()
            .find(|(s, _)| proof(&challenge.nonce, s).as_bytes() == presented)
            .map(|(_, scope)| *scope)
            .ok_or(NetError::AuthFailed)?;
        let mut token = [0u8; 16];
        ctx.rng.fill_bytes(&mut token);
        self.sessions.insert(
            token,
            Session {
                share,
                scope,
                client: from,
                client_id: challenge.client_id,
                uploads: BTreeSet::new(),
            },
        );
        let mut ev = LogEvent::new(ctx.epoch, LogEventKind::PeerConnect);
        ev.share = Some(share);
        ev.peer_id = challenge.client_id;
        ev.host = Some(from.to_string());
        self.log_event(ev);
        Ok(WireMessage::new(MessageKind::Auth, Some(&share))
            .with("token", token.to_vec())
            .with("scope", scope.as_str())
            .with("peer_id", self.peer_id.as_bytes().to_vec()))
    }

    fn on_piece(&mut self, msg: &WireMessage, ctx: &mut Ctx<'_>) -> Result<WireMessage, NetError> {
        let (token, session) = self.session(msg)?;
        let (token, share) = (*token, session.share);
        let path = msg.text("path").ok_or_else(|| NetError::Protocol("missing path".into()))?;
        let index = msg
            .int("index")
            .and_then(|i| u64::try_from(i).ok())
            .ok_or_else(|| NetError::Protocol("missing index".into()))?;
        let mut data = self.piece_bytes(&share, path, index, ctx.now)?;
        self.corrupt(index, &mut data);
        let session = self.sessions.get_mut(&token).expect("looked up above");
        if session.uploads.insert(path.to_string()) {
            let mut ev = LogEvent::new(ctx.epoch, LogEventKind::Upload);
            ev.share = Some(share);
            ev.peer_id = session.client_id;
            ev.host = Some(session.client.to_string());
            ev.path = Some(path.to_string());
            self.log_event(ev);
        }
        Ok(WireMessage::new(MessageKind::PieceResponse, Some(&share))
            .with("path", path)
            .with("index", index as i64)
            .with("data", data))
    }

    /// Builds the AUTH proof for a challenge from a server at `level`. A
    /// Master holder talking to a read-only server proves with the derived
    /// read-only secret, the only one that server can check.
    pub(crate) fn auth_proof(secret: &Secret, nonce: &[u8], server_level: Option<AccessLevel>) -> Hash20 {
        let use_ro = secret.level() == AccessLevel::Master && server_level == Some(AccessLevel::ReadOnly);
        match use_ro.then(|| secret.derive_readonly().ok()).flatten() {
            Some(ro) => proof(nonce, &ro),
            None => proof(nonce, secret),
        }
    }
}

fn error_reply(share: Option<&ShareId>, e: &NetError) -> WireMessage {
    let code = match e {
        NetError::UnknownShare => "UnknownShare",
        NetError::AuthFailed => "AuthFailed",
        NetError::BadToken => "BadToken",
        NetError::UnknownFile(_) => "UnknownFile",
        NetError::PieceUnavailable(_) => "PieceUnavailable",
        _ => "ProtocolError",
    };
    let detail = match e {
        NetError::UnknownFile(d) | NetError::PieceUnavailable(d) => d.clone(),
        other => other.to_string(),
    };
    WireMessage::error(share, code, detail)
}
