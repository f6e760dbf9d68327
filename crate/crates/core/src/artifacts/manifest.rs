//! The `<ShareID>.db` share manifest.
//!
//! The container is a single bencoded dictionary:
//!
//! ```text
//! share   -> 20-byte ShareID
//! peer_id -> 20-byte PeerID of the client that owns this copy (optional)
//! files   -> [ {path, size, mtime, state, invalidated, hash20, peer?}, ... ]
//! meta    -> [ {path, size, piece_len, pieces, hash}, ... ]
//! ```
//!
//! `pieces` is the concatenation of the per-piece SHA1 values and `hash` is
//! the SHA1 of that concatenation.

use std::collections::BTreeSet;

use crate::bencode::{self, BValue, DictBuilder};
use crate::digest::Hash20;
use crate::identity::{PeerId, ShareId};
use crate::integrity;

use super::{
    as_dict, field, hash20, req, req_bytes, req_int, req_text, req_u64, schema, u64_value,
    unknown_keys, ArtifactError, Dict, Result,
};

pub const STATE_PRESENT: i64 = 1;
pub const STATE_DELETED: i64 = 2;

const FILE_KEYS: &[&str] = &["path", "size", "mtime", "state", "invalidated", "hash20", "peer"];
const META_KEYS: &[&str] = &["path", "size", "piece_len", "pieces", "hash"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntry {
    pub path: String,
    pub size: u64,
    /// Epoch seconds. For invalidated entries, the time of invalidation.
    pub mtime: i64,
    /// 1 = present, 2 = deleted. Other values are kept verbatim.
    pub state: i64,
    pub invalidated: bool,
    /// SHA1 of the last known valid content.
    pub hash20: Hash20,
    /// Peer that last wrote this file's content.
    pub peer: Option<PeerId>,
    pub extra: Dict,
}

impl FileEntry {
    pub fn is_present(&self) -> bool {
        self.state == STATE_PRESENT
    }

    pub fn is_deleted(&self) -> bool {
        self.state == STATE_DELETED
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileMeta {
    pub path: String,
    pub size: u64,
    pub piece_len: u64,
    pub piece_hashes: Vec<Hash20>,
    pub aggregate_hash: Hash20,
    pub extra: Dict,
}

impl FileMeta {
    pub fn piece_count(&self) -> u64 {
        integrity::piece_count(self.size, self.piece_len)
    }

    /// Length of piece `index`; the final piece may be short.
    pub fn piece_length(&self, index: u64) -> Option<u64> {
        integrity::piece_length(self.size, self.piece_len, index)
    }

    /// True when `aggregate_hash` is the SHA1 of the concatenated piece hashes.
    pub fn aggregate_consistent(&self) -> bool {
        integrity::aggregate_hash(&self.piece_hashes) == self.aggregate_hash
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareManifest {
    pub share_id: ShareId,
    pub peer_id: Option<PeerId>,
    pub files: Vec<FileEntry>,
    pub meta: Vec<FileMeta>,
    pub extra: Dict,
}

impl ShareManifest {
    pub fn new(share_id: ShareId) -> ShareManifest {
        ShareManifest {
            share_id,
            peer_id: None,
            files: Vec::new(),
            meta: Vec::new(),
            extra: Dict::new(),
        }
    }

    pub fn entry(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }

    pub fn entry_mut(&mut self, path: &str) -> Option<&mut FileEntry> {
        self.files.iter_mut().find(|f| f.path == path)
    }

    pub fn meta(&self, path: &str) -> Option<&FileMeta> {
        self.meta.iter().find(|m| m.path == path)
    }

    /// Inserts or replaces the entry and meta for `entry.path`.
    pub fn upsert(&mut self, entry: FileEntry, meta: Option<FileMeta>) {
        let path = entry.path.clone();
        match self.entry_mut(&path) {
            Some(e) => *e = entry,
            None => self.files.push(entry),
        }
        if let Some(meta) = meta {
            match self.meta.iter_mut().find(|m| m.path == path) {
                Some(m) => *m = meta,
                None => self.meta.push(meta),
            }
        }
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        self.meta.sort_by(|a, b| a.path.cmp(&b.path));
    }

    /// Non-fatal observations: unrecognised `state` values.
    pub fn warnings(&self) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| f.state != STATE_PRESENT && f.state != STATE_DELETED)
            .map(|f| format!("{}: unrecognised state {}", f.path, f.state))
            .collect()
    }

    /// Paths whose meta `hash` does not agree with its piece hashes.
    pub fn aggregate_mismatches(&self) -> Vec<&str> {
        self.meta
            .iter()
            .filter(|m| !m.aggregate_consistent())
            .map(|m| m.path.as_str())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for f in &self.files {
            if !seen.insert(f.path.as_str()) {
                return Err(schema(format!("duplicate file entry {:?}", f.path)));
            }
        }
        let mut seen = BTreeSet::new();
        for m in &self.meta {
            if !seen.insert(m.path.as_str()) {
                return Err(schema(format!("duplicate meta entry {:?}", m.path)));
            }
        }
        for f in self.files.iter().filter(|f| f.is_present()) {
            if !seen.contains(f.path.as_str()) {
                return Err(schema(format!("present file {:?} has no meta entry", f.path)));
            }
        }
        Ok(())
    }
}

fn parse_file(v: &BValue) -> Result<FileEntry> {
    let d = as_dict(v, "file entry")?;
    let path = req_text(d, "path", "file entry")?;
    let ctx = format!("file {path:?}");
    let invalidated = match req_int(d, "invalidated", &ctx)? {
        0 => false,
        1 => true,
        other => return Err(schema(format!("{ctx}: invalidated must be 0 or 1, got {other}"))),
    };
    let peer = match field(d, "peer") {
        None => None,
        Some(_) => {
            let b = req_bytes(d, "peer", &ctx)?;
            Some(PeerId::from_slice(b).ok_or(ArtifactError::BadLength {
                expected: 20,
                actual: b.len(),
            })?)
        }
    };
    Ok(FileEntry {
        size: req_u64(d, "size", &ctx)?,
        mtime: req_int(d, "mtime", &ctx)?,
        state: req_int(d, "state", &ctx)?,
        invalidated,
        hash20: hash20(d, "hash20", &ctx)?,
        peer,
        extra: unknown_keys(d, FILE_KEYS),
        path,
    })
}

fn parse_meta(v: &BValue) -> Result<FileMeta> {
    let d = as_dict(v, "meta entry")?;
    let path = req_text(d, "path", "meta entry")?;
    let ctx = format!("meta {path:?}");
    let size = req_u64(d, "size", &ctx)?;
    let piece_len = req_u64(d, "piece_len", &ctx)?;
    if piece_len == 0 {
        return Err(schema(format!("{ctx}: piece_len must be positive")));
    }
    let blob = req_bytes(d, "pieces", &ctx)?;
    if blob.len() % 20 != 0 {
        return Err(ArtifactError::HashLength {
            field: format!("{ctx}.pieces"),
            len: blob.len(),
        });
    }
    let piece_hashes: Vec<Hash20> = blob
        .chunks_exact(20)
        .filter_map(Hash20::from_slice)
        .collect();
    let expected = integrity::piece_count(size, piece_len);
    if piece_hashes.len() as u64 != expected {
        return Err(ArtifactError::PieceCountMismatch {
            path,
            expected,
            actual: piece_hashes.len() as u64,
        });
    }
    Ok(FileMeta {
        size,
        piece_len,
        piece_hashes,
        aggregate_hash: hash20(d, "hash", &ctx)?,
        extra: unknown_keys(d, META_KEYS),
        path,
    })
}

pub fn parse_manifest(bytes: &[u8]) -> Result<ShareManifest> {
    let v = bencode::decode(bytes)?;
    let d = as_dict(&v, "manifest")?;
    let ctx = "manifest";
    let share = req_bytes(d, "share", ctx)?;
    let share_id = ShareId::from_slice(share).ok_or(ArtifactError::BadLength {
        expected: 20,
        actual: share.len(),
    })?;
    let peer_id = match field(d, "peer_id") {
        None => None,
        Some(_) => {
            let b = req_bytes(d, "peer_id", ctx)?;
            Some(PeerId::from_slice(b).ok_or(ArtifactError::BadLength {
                expected: 20,
                actual: b.len(),
            })?)
        }
    };
    let list = |key: &str| -> Result<&[BValue]> {
        req(d, key, ctx)?
            .as_list()
            .ok_or_else(|| schema(format!("{ctx}: `{key}` must be a list")))
    };
    let files = list("files")?.iter().map(parse_file).collect::<Result<Vec<_>>>()?;
    let meta = list("meta")?.iter().map(parse_meta).collect::<Result<Vec<_>>>()?;
    let manifest = ShareManifest {
        share_id,
        peer_id,
        files,
        meta,
        extra: unknown_keys(d, &["share", "peer_id", "files", "meta"]),
    };
    manifest.validate()?;
    Ok(manifest)
}

fn file_to_bencode(f: &FileEntry) -> BValue {
    let mut d = f.extra.clone();
    if let BValue::Dict(known) = DictBuilder::new()
        .insert("path", f.path.as_str())
        .insert("size", u64_value(f.size))
        .insert("mtime", f.mtime)
        .insert("state", f.state)
        .insert("invalidated", i64::from(f.invalidated))
        .insert("hash20", f.hash20.0.to_vec())
        .insert_opt("peer", f.peer.map(|p| p.0.to_vec()))
        .build()
    {
        d.extend(known);
    }
    BValue::Dict(d)
}

fn meta_to_bencode(m: &FileMeta) -> BValue {
    let mut d = m.extra.clone();
    let pieces: Vec<u8> = m.piece_hashes.iter().flat_map(|h| h.0).collect();
    if let BValue::Dict(known) = DictBuilder::new()
        .insert("path", m.path.as_str())
        .insert("size", u64_value(m.size))
        .insert("piece_len", u64_value(m.piece_len))
        .insert("pieces", pieces)
        .insert("hash", m.aggregate_hash.0.to_vec())
        .build()
    {
        d.extend(known);
    }
    BValue::Dict(d)
}

pub fn write_manifest(manifest: &ShareManifest) -> Vec<u8> {
    let mut d = manifest.extra.clone();
    d.insert(b"share".to_vec(), BValue::bytes(manifest.share_id.0.to_vec()));
    if let Some(p) = manifest.peer_id {
        d.insert(b"peer_id".to_vec(), BValue::bytes(p.0.to_vec()));
    }
    d.insert(
        b"files".to_vec(),
        BValue::List(manifest.files.iter().map(file_to_bencode).collect()),
    );
    d.insert(
        b"meta".to_vec(),
        BValue::List(manifest.meta.iter().map(meta_to_bencode).collect()),
    );
    bencode::encode(&BValue::Dict(d))
}
