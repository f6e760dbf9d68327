//! Readers and writers for the on-disk artifacts a sync client leaves behind:
//! `sync.dat`, `settings.dat`, `sync.log`, `.SyncID` and the per-share
//! `<ShareID>.db` manifest, plus discovery of where they live under each OS
//! profile.

mod locate;
mod manifest;
mod settings;
mod sync_dat;
mod sync_id;
mod sync_log;

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::bencode::{BValue, DecodeError};

pub use locate::{locate_artifacts, resolve_in_root, ArtifactSet, OsProfile, ShareFolder};
pub use manifest::{
    parse_manifest, write_manifest, FileEntry, FileMeta, ShareManifest, STATE_DELETED,
    STATE_PRESENT,
};
pub use settings::{
    parse_settings, write_settings, Settings, CHECKIN_RANGE, DEFAULT_ARCHIVE_DAYS, DEFAULT_CHECKIN_MINUTES, DEFAULT_PIECE_LEN,
};
pub use sync_dat::{parse_sync_dat, write_sync_dat, KnownPeer, SyncDat, SyncDatConfig};
pub use sync_id::{parse_sync_id, write_sync_id};
pub use sync_log::{format_sync_log, parse_sync_log, LogEvent, LogEventKind, LogWarning, SyncLog};

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("{field}: expected a 20-byte hash, got {len} bytes")]
    HashLength { field: String, len: usize },
    #[error("{path}: {actual} piece hashes for {expected} pieces")]
    PieceCountMismatch {
        path: String,
        expected: u64,
        actual: u64,
    },
    #[error("expected {expected} bytes, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("{field} = {value} is out of range {range}")]
    Range {
        field: &'static str,
        value: i64,
        range: &'static str,
    },
    #[error("artifact root {0} does not exist")]
    RootNotFound(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ArtifactError>;

pub(crate) type Dict = BTreeMap<Vec<u8>, BValue>;

fn schema(msg: impl Into<String>) -> ArtifactError {
    ArtifactError::SchemaViolation(msg.into())
}

pub(crate) fn as_dict<'a>(v: &'a BValue, what: &str) -> Result<&'a Dict> {
    v.as_dict()
        .ok_or_else(|| schema(format!("{what} must be a dictionary, found {}", v.type_name())))
}

fn field<'a>(d: &'a Dict, key: &str) -> Option<&'a BValue> {
    d.get(key.as_bytes())
}

fn req<'a>(d: &'a Dict, key: &str, ctx: &str) -> Result<&'a BValue> {
    field(d, key).ok_or_else(|| schema(format!("{ctx}: missing required key `{key}`")))
}

fn req_int(d: &Dict, key: &str, ctx: &str) -> Result<i64> {
    let v = req(d, key, ctx)?;
    v.as_int()
        .ok_or_else(|| schema(format!("{ctx}: `{key}` must be an integer, found {}", v.type_name())))
}

fn opt_int(d: &Dict, key: &str, ctx: &str) -> Result<Option<i64>> {
    match field(d, key) {
        None => Ok(None),
        Some(_) => req_int(d, key, ctx).map(Some),
    }
}

fn req_bytes<'a>(d: &'a Dict, key: &str, ctx: &str) -> Result<&'a [u8]> {
    let v = req(d, key, ctx)?;
    v.as_bytes().ok_or_else(|| {
        schema(format!("{ctx}: `{key}` must be a byte string, found {}", v.type_name()))
    })
}

fn req_text(d: &Dict, key: &str, ctx: &str) -> Result<String> {
    let b = req_bytes(d, key, ctx)?;
    String::from_utf8(b.to_vec()).map_err(|_| schema(format!("{ctx}: `{key}` is not UTF-8")))
}

fn req_u64(d: &Dict, key: &str, ctx: &str) -> Result<u64> {
    let v = req_int(d, key, ctx)?;
    u64::try_from(v).map_err(|_| schema(format!("{ctx}: `{key}` must be non-negative, got {v}")))
}

fn flag(d: &Dict, key: &str, ctx: &str) -> Result<Option<bool>> {
    match opt_int(d, key, ctx)? {
        None => Ok(None),
        Some(0) => Ok(Some(false)),
        Some(1) => Ok(Some(true)),
        Some(other) => Err(schema(format!("{ctx}: flag `{key}` must be 0 or 1, got {other}"))),
    }
}

fn hash20(d: &Dict, key: &str, ctx: &str) -> Result<crate::digest::Hash20> {
    let b = req_bytes(d, key, ctx)?;
    crate::digest::Hash20::from_slice(b).ok_or_else(|| ArtifactError::HashLength {
        field: format!("{ctx}.{key}"),
        len: b.len(),
    })
}

/// Keys of `d` not in `known`, kept so unknown data survives a rewrite.
fn unknown_keys(d: &Dict, known: &[&str]) -> Dict {
    d.iter()
        .filter(|(k, _)| !known.iter().any(|n| n.as_bytes() == k.as_slice()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

fn flag_value(b: bool) -> BValue {
    BValue::Int(i64::from(b))
}

fn u64_value(v: u64) -> BValue {
    BValue::Int(i64::try_from(v).unwrap_or(i64::MAX))
}
