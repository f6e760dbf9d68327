use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::SocketAddrV4;

use serde::{Deserialize, Serialize};

use crate::artifacts::{FileMeta, DEFAULT_PIECE_LEN};
use crate::digest::Hash20;
use crate::identity::{PeerId, Secret};
use crate::integrity::{piece_count, verify_file, verify_piece, PieceMap, VerificationResult, VerificationStatus};
use crate::syncnet::{Network, NodeId, PeerRecord, SessionToken};

use super::targets::TargetFile;
use super::{AcquisitionError, RecoveryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CustodyAction {
    PolicyRefused,
    Handshake,
    HandshakeOk,
    HandshakeFailed,
    ManifestRequest,
    ManifestResponse,
    ManifestError,
    SourceIneligible,
    PieceRequest,
    PieceResponse,
    PieceError,
    VerifyOk,
    VerifyFail,
    Refetch,
    PieceMissing,
    FileVerified,
    Note,
}

impl fmt::Display for CustodyAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

/// One timestamped step of an acquisition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustodyEntry {
    pub seq: u64,
    /// Simulation time in milliseconds.
    pub t_ms: u64,
    /// Wall-clock equivalent in epoch seconds.
    pub epoch: i64,
    pub action: CustodyAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<SocketAddrV4>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<Hash20>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustodyLog {
    pub entries: Vec<CustodyEntry>,
}

impl CustodyLog {
    fn push(&mut self, net: &Network, action: CustodyAction) -> &mut CustodyEntry {
        let seq = self.entries.len() as u64;
        self.entries.push(CustodyEntry {
            seq,
            t_ms: net.now(),
            epoch: net.epoch_now(),
            action,
            peer: None,
            path: None,
            index: None,
            digest: None,
            detail: None,
        });
        self.entries.last_mut().expect("just pushed")
    }

    pub fn count(&self, action: CustodyAction) -> usize {
        self.entries.iter().filter(|e| e.action == action).count()
    }
}

impl CustodyEntry {
    fn peer(&mut self, p: SocketAddrV4) -> &mut Self {
        self.peer = Some(p);
        self
    }
    fn path(&mut self, p: &str) -> &mut Self {
        self.path = Some(p.to_string());
        self
    }
    fn index(&mut self, i: u64) -> &mut Self {
        self.index = Some(i);
        self
    }
    fn digest(&mut self, d: Hash20) -> &mut Self {
        self.digest = Some(d);
        self
    }
    fn detail(&mut self, d: impl Into<String>) -> &mut Self {
        self.detail = Some(d.into());
        self
    }
}

/// Which response supplied a recovered piece.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceSource {
    pub peer: SocketAddrV4,
    /// Custody sequence number of the PIECE_RESPONSE entry.
    pub response_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceContribution {
    pub addr: SocketAddrV4,
    pub peer_id: Option<PeerId>,
    pub pieces: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceRecord {
    pub target: TargetFile,
    /// Piece layout the recovery was verified against.
    pub meta: FileMeta,
    pub pieces: PieceMap,
    pub piece_sources: BTreeMap<u64, PieceSource>,
    pub verification: VerificationResult,
    pub sources: Vec<SourceContribution>,
    pub custody: CustodyLog,
}

impl EvidenceRecord {
    /// The whole file, when every piece was recovered.
    pub fn bytes(&self) -> Option<Vec<u8>> {
        if !self.verification.missing_pieces.is_empty() {
            return None;
        }
        Some(self.pieces.values().flatten().copied().collect())
    }
}

/// Piece verification plus the whole-file check against the target's
/// expected hash.
pub(crate) fn assess(pieces: &PieceMap, meta: &FileMeta, expected: &Hash20) -> VerificationResult {
    let mut v = verify_file(pieces, meta);
    if v.status == VerificationStatus::FullMatch {
        let mut whole = Vec::with_capacity(meta.size as usize);
        for p in pieces.values() {
            whole.extend_from_slice(p);
        }
        if Hash20::of(&whole) != *expected {
            v.status = VerificationStatus::Mismatch;
        }
    }
    v
}

fn fallback_meta(net: &Network, log: &mut CustodyLog, target: &TargetFile) -> FileMeta {
    log.push(net, CustodyAction::Note)
        .path(&target.path)
        .detail("no piece layout available; assuming the default piece length");
    let count = piece_count(target.size, DEFAULT_PIECE_LEN);
    FileMeta {
        path: target.path.clone(),
        size: target.size,
        piece_len: DEFAULT_PIECE_LEN,
        piece_hashes: vec![Hash20::default(); count as usize],
        aggregate_hash: Hash20::default(),
        extra: Default::default(),
    }
}

fn log_outcome(net: &Network, log: &mut CustodyLog, target: &TargetFile, v: &VerificationResult) {
    let e = log.push(net, CustodyAction::FileVerified);
    e.path(&target.path).detail(format!(
        "{}: {} verified, {} failed, {} missing",
        v.status,
        v.verified_pieces.len(),
        v.failed_pieces.len(),
        v.missing_pieces.len()
    ));
    if v.status == VerificationStatus::FullMatch {
        e.digest(target.expected_hash);
    }
}

/// A record for a target nothing could be fetched for: every piece
/// missing, with `why` in the custody log.
pub(crate) fn unrecovered(net: &Network, target: &TargetFile, why: &str) -> EvidenceRecord {
    let mut log = CustodyLog::default();
    log.push(net, CustodyAction::Note).path(&target.path).detail(why);
    let meta = match target.meta.clone() {
        Some(m) => m,
        None => fallback_meta(net, &mut log, target),
    };
    for index in 0..meta.piece_count() {
        log.push(net, CustodyAction::PieceMissing).path(&target.path).index(index);
    }
    let verification = assess(&PieceMap::new(), &meta, &target.expected_hash);
    log_outcome(net, &mut log, target, &verification);
    EvidenceRecord {
        target: target.clone(),
        meta,
        pieces: PieceMap::new(),
        piece_sources: BTreeMap::new(),
        verification,
        sources: Vec::new(),
        custody: log,
    }
}

struct Source {
    addr: SocketAddrV4,
    peer_id: Option<PeerId>,
    token: SessionToken,
}

/// Retrieves `target` from `peers` on behalf of the investigator node.
///
/// Peers the policy does not allow are refused without contact. Each
/// remaining peer is authenticated and its manifest checked for an entry
/// with the expected hash. Pieces are requested from eligible sources in
/// address order and verified on arrival; a piece that fails is refetched
/// once from the same source and then tried at each alternate before it is
/// declared missing.
pub fn recover(
    net: &mut Network,
    inv: NodeId,
    target: &TargetFile,
    peers: &[PeerRecord],
    secret: &Secret,
    policy: &RecoveryPolicy,
) -> Result<EvidenceRecord, AcquisitionError> {
    let mut log = CustodyLog::default();
    let path = target.path.as_str();
    let mut allowed: BTreeMap<SocketAddrV4, Option<PeerId>> = BTreeMap::new();
    for p in peers {
        if policy.allows(p.addr) {
            let id = allowed.entry(p.addr).or_default();
            *id = id.or(p.peer_id);
        } else {
            log.push(net, CustodyAction::PolicyRefused).peer(p.addr).detail("not on the known peers list");
        }
    }
    if allowed.is_empty() {
        return Err(AcquisitionError::NoEligiblePeers);
    }

    let mut sources = Vec::new();
    let mut remote_meta = None;
    for (addr, known_id) in allowed {
        log.push(net, CustodyAction::Handshake).peer(addr);
        let token = match net.session_handshake(inv, addr, target.share, secret) {
            Ok(t) => t,
            Err(e) => {
                log.push(net, CustodyAction::HandshakeFailed).peer(addr).detail(e.to_string());
                continue;
            }
        };
        let peer_id = token.server_peer_id.or(known_id);
        let e = log.push(net, CustodyAction::HandshakeOk);
        e.peer(addr).detail(format!("scope {}", token.scope.as_str()));
        if let Some(id) = peer_id {
            e.detail(format!("scope {}, peer {id}", token.scope.as_str()));
        }
        log.push(net, CustodyAction::ManifestRequest).peer(addr);
        let manifest = match net.fetch_manifest(inv, &token) {
            Ok(m) => m,
            Err(e) => {
                log.push(net, CustodyAction::ManifestError).peer(addr).detail(e.to_string());
                continue;
            }
        };
        log.push(net, CustodyAction::ManifestResponse)
            .peer(addr)
            .detail(format!("{} entries", manifest.files.len()));
        let why_not = match manifest.entry(path) {
            None => Some("file not listed".to_string()),
            Some(e) if e.invalidated => Some("entry invalidated".to_string()),
            Some(e) if e.hash20 != target.expected_hash => Some(format!("holds version {}", e.hash20)),
            Some(_) => None,
        };
        if let Some(why) = why_not {
            log.push(net, CustodyAction::SourceIneligible).peer(addr).path(path).detail(why);
            continue;
        }
        if remote_meta.is_none() {
            remote_meta = manifest.meta(path).cloned();
        }
        sources.push(Source { addr, peer_id, token });
    }

    let meta = match target.meta.clone().or(remote_meta) {
        Some(m) => m,
        None => fallback_meta(net, &mut log, target),
    };

    let mut pieces = PieceMap::new();
    let mut piece_sources = BTreeMap::new();
    for index in 0..meta.piece_count() {
        'sources: for s in &sources {
            for attempt in 0..2 {
                if attempt == 1 {
                    log.push(net, CustodyAction::Refetch).peer(s.addr).path(path).index(index);
                }
                log.push(net, CustodyAction::PieceRequest).peer(s.addr).path(path).index(index);
                let data = match net.fetch_piece(inv, &s.token, path, index) {
                    Ok(d) => d,
                    Err(e) => {
                        log.push(net, CustodyAction::PieceError)
                            .peer(s.addr)
                            .path(path)
                            .index(index)
                            .detail(e.to_string());
                        continue 'sources;
                    }
                };
                let digest = Hash20::of(&data);
                let response_seq = log.entries.len() as u64;
                log.push(net, CustodyAction::PieceResponse)
                    .peer(s.addr)
                    .path(path)
                    .index(index)
                    .digest(digest)
                    .detail(format!("{} bytes", data.len()));
                if verify_piece(&data, index, &meta) == Ok(true) {
                    log.push(net, CustodyAction::VerifyOk).peer(s.addr).path(path).index(index).digest(digest);
                    pieces.insert(index, data);
                    piece_sources.insert(index, PieceSource { peer: s.addr, response_seq });
                    break 'sources;
                }
                log.push(net, CustodyAction::VerifyFail)
                    .peer(s.addr)
                    .path(path)
                    .index(index)
                    .digest(digest)
                    .detail("piece discarded");
            }
        }
        if !pieces.contains_key(&index) {
            log.push(net, CustodyAction::PieceMissing).path(path).index(index);
        }
    }

    let verification = assess(&pieces, &meta, &target.expected_hash);
    log_outcome(net, &mut log, target, &verification);

    let contributions = sources
        .iter()
        .map(|s| SourceContribution {
            addr: s.addr,
            peer_id: s.peer_id,
            pieces: piece_sources
                .iter()
                .filter(|(_, p)| p.peer == s.addr)
                .map(|(i, _)| *i)
                .collect(),
        })
        .filter(|c| !c.pieces.is_empty())
        .collect();
    Ok(EvidenceRecord {
        target: target.clone(),
        meta,
        pieces,
        piece_sources,
        verification,
        sources: contributions,
        custody: log,
    })
}
