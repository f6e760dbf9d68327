//! Piece-wise SHA1 indexing and verification.
//!
//! A file is cut into fixed-length pieces (the last one may be short). Each
//! piece is hashed with SHA1, and the file's aggregate hash is the SHA1 of the
//! in-order concatenation of those piece hashes. A zero-length file has no
//! pieces and its aggregate is the SHA1 of the empty string.
//!
//! With the `parallel` feature, piece hashing runs on the rayon pool. The
//! output is identical to [`index_file_sequential`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::artifacts::FileMeta;
use crate::digest::Hash20;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntegrityError {
    #[error("piece length must be positive")]
    ZeroPieceLength,
    #[error("hash {index} is {len} bytes, expected 20")]
    HashLength { index: usize, len: usize },
    #[error("piece index {index} out of range for {count} pieces")]
    IndexOutOfRange { index: u64, count: u64 },
    #[error("piece {index} is {actual} bytes, expected {expected}")]
    WrongPieceLength {
        index: u64,
        expected: u64,
        actual: u64,
    },
}

pub fn piece_count(size: u64, piece_len: u64) -> u64 {
    if piece_len == 0 {
        return 0;
    }
    size.div_ceil(piece_len)
}

pub fn piece_length(size: u64, piece_len: u64, index: u64) -> Option<u64> {
    let n = piece_count(size, piece_len);
    (index < n).then(|| {
        if index + 1 == n {
            size - index * piece_len
        } else {
            piece_len
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileIndex {
    pub size: u64,
    pub piece_len: u64,
    pub piece_hashes: Vec<Hash20>,
    pub aggregate_hash: Hash20,
    pub whole_file_hash: Hash20,
}

impl FileIndex {
    pub fn piece_count(&self) -> u64 {
        self.piece_hashes.len() as u64
    }

    pub fn to_meta(&self, path: &str) -> FileMeta {
        FileMeta {
            path: path.to_string(),
            size: self.size,
            piece_len: self.piece_len,
            piece_hashes: self.piece_hashes.clone(),
            aggregate_hash: self.aggregate_hash,
            extra: Default::default(),
        }
    }
}

fn chunk_len(piece_len: u64) -> usize {
    usize::try_from(piece_len).unwrap_or(usize::MAX)
}

pub fn index_file(content: &[u8], piece_len: u64) -> Result<FileIndex, IntegrityError> {
    #[cfg(feature = "parallel")]
    {
        if piece_len == 0 {
            return Err(IntegrityError::ZeroPieceLength);
        }
        let (piece_hashes, whole_file_hash) = rayon::join(
            || {
                content
                    .par_chunks(chunk_len(piece_len))
                    .map(Hash20::of)
                    .collect::<Vec<_>>()
            },
            || Hash20::of(content),
        );
        Ok(FileIndex {
            size: content.len() as u64,
            piece_len,
            aggregate_hash: aggregate_hash(&piece_hashes),
            piece_hashes,
            whole_file_hash,
        })
    }
    #[cfg(not(feature = "parallel"))]
    {
        index_file_sequential(content, piece_len)
    }
}

pub fn index_file_sequential(content: &[u8], piece_len: u64) -> Result<FileIndex, IntegrityError> {
    if piece_len == 0 {
        return Err(IntegrityError::ZeroPieceLength);
    }
    let piece_hashes: Vec<Hash20> = content.chunks(chunk_len(piece_len)).map(Hash20::of).collect();
    Ok(FileIndex {
        size: content.len() as u64,
        piece_len,
        aggregate_hash: aggregate_hash(&piece_hashes),
        piece_hashes,
        whole_file_hash: Hash20::of(content),
    })
}

/// SHA1 over the in-order concatenation of `piece_hashes`.
pub fn aggregate_hash(piece_hashes: &[Hash20]) -> Hash20 {
    let mut h = Sha1::new();
    for p in piece_hashes {
        h.update(p.0);
    }
    Hash20(h.finalize().into())
}

/// [`aggregate_hash`] over untyped byte slices, checking each is 20 bytes.
pub fn aggregate_hash_of_slices(piece_hashes: &[&[u8]]) -> Result<Hash20, IntegrityError> {
    let typed = piece_hashes
        .iter()
        .enumerate()
        .map(|(index, s)| {
            Hash20::from_slice(s).ok_or(IntegrityError::HashLength {
                index,
                len: s.len(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate_hash(&typed))
}

pub fn verify_piece(piece: &[u8], index: u64, meta: &FileMeta) -> Result<bool, IntegrityError> {
    let count = meta.piece_count();
    let expected = meta
        .piece_length(index)
        .ok_or(IntegrityError::IndexOutOfRange { index, count })?;
    if piece.len() as u64 != expected {
        return Err(IntegrityError::WrongPieceLength {
            index,
            expected,
            actual: piece.len() as u64,
        });
    }
    let want = meta
        .piece_hashes
        .get(index as usize)
        .ok_or(IntegrityError::IndexOutOfRange { index, count })?;
    Ok(Hash20::of(piece) == *want)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerificationStatus {
    FullMatch,
    Partial,
    Mismatch,
}

impl std::fmt::Display for VerificationStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VerificationStatus::FullMatch => "FULL_MATCH",
            VerificationStatus::Partial => "PARTIAL",
            VerificationStatus::Mismatch => "MISMATCH",
        })
    }
}

/// Outcome of verifying a set of pieces against a file's meta. The three
/// index sets partition `0..piece_count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub status: VerificationStatus,
    pub verified_pieces: BTreeSet<u64>,
    pub failed_pieces: BTreeSet<u64>,
    pub missing_pieces: BTreeSet<u64>,
}

pub type PieceMap = BTreeMap<u64, Vec<u8>>;

/// Checks every supplied piece against `meta`.
///
/// * `FullMatch`: every piece present and verified, and the aggregate of the
///   recomputed piece hashes equals `meta.aggregate_hash`.
/// * `Mismatch`: every piece present, but some piece or the aggregate fails.
/// * `Partial`: at least one piece missing.
pub fn verify_file(pieces: &PieceMap, meta: &FileMeta) -> VerificationResult {
    let count = meta.piece_count();
    let mut verified_pieces = BTreeSet::new();
    let mut failed_pieces = BTreeSet::new();
    let mut missing_pieces = BTreeSet::new();
    let mut recomputed = Vec::with_capacity(count as usize);
    for index in 0..count {
        match pieces.get(&index) {
            None => {
                missing_pieces.insert(index);
            }
            Some(bytes) => {
                recomputed.push(Hash20::of(bytes));
                match verify_piece(bytes, index, meta) {
                    Ok(true) => verified_pieces.insert(index),
                    _ => failed_pieces.insert(index),
                };
            }
        }
    }
    let status = if !missing_pieces.is_empty() {
        VerificationStatus::Partial
    } else if failed_pieces.is_empty() && aggregate_hash(&recomputed) == meta.aggregate_hash {
        VerificationStatus::FullMatch
    } else {
        VerificationStatus::Mismatch
    };
    VerificationResult {
        status,
        verified_pieces,
        failed_pieces,
        missing_pieces,
    }
}

/// Splits `content` into pieces as `meta` lays them out.
pub fn split_pieces(content: &[u8], piece_len: u64) -> PieceMap {
    if piece_len == 0 {
        return PieceMap::new();
    }
    content
        .chunks(chunk_len(piece_len))
        .enumerate()
        .map(|(i, c)| (i as u64, c.to_vec()))
        .collect()
}

pub fn verify_content(content: &[u8], meta: &FileMeta) -> VerificationResult {
    let mut pieces = split_pieces(content, meta.piece_len);
    // Content longer than the meta describes cannot match.
    let count = meta.piece_count();
    if content.len() as u64 != meta.size {
        pieces.retain(|i, _| *i < count);
        let mut r = verify_file(&pieces, meta);
        if r.status == VerificationStatus::FullMatch {
            r.status = VerificationStatus::Mismatch;
        }
        if let Some(last) = count.checked_sub(1) {
            if r.verified_pieces.remove(&last) || r.missing_pieces.remove(&last) {
                r.failed_pieces.insert(last);
            }
        }
        return r;
    }
    verify_file(&pieces, meta)
}
