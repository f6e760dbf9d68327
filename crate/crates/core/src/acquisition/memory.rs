use serde::{Deserialize, Serialize};

use crate::identity::{is_base32_byte, AccessLevel, PeerId, Secret, ShareId, SECRET_TEXT_LEN};

/// Shortest Base32 run reported as a possible partial secret.
pub const FRAGMENT_MIN_LEN: usize = 16;

const PEER_ID_TAG: &[u8] = b"7:peer_id20:";
const PORT_TAG: &[u8] = b"4:porti";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretCandidate {
    pub offset: usize,
    pub secret: Secret,
    pub level: AccessLevel,
    pub share_id: ShareId,
}

/// A Base32 run too short (or otherwise unable) to hold a whole secret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretFragment {
    pub offset: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerIdCandidate {
    pub offset: usize,
    pub peer_id: PeerId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortCandidate {
    pub offset: usize,
    pub port: u16,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryScan {
    pub secrets: Vec<SecretCandidate>,
    pub fragments: Vec<SecretFragment>,
    pub peer_ids: Vec<PeerIdCandidate>,
    pub ports: Vec<PortCandidate>,
}

impl MemoryScan {
    fn extend(&mut self, other: MemoryScan) {
        self.secrets.extend(other.secrets);
        self.fragments.extend(other.fragments);
        self.peer_ids.extend(other.peer_ids);
        self.ports.extend(other.ports);
    }
}

/// Every 53-character window of the run at `start..end` that decodes to a
/// secret of a known access level.
fn scan_run(blob: &[u8], start: usize, end: usize, out: &mut MemoryScan) {
    let run = &blob[start..end];
    let mut found = false;
    if run.len() >= SECRET_TEXT_LEN {
        for (i, w) in run.windows(SECRET_TEXT_LEN).enumerate() {
            let text = std::str::from_utf8(w).expect("Base32 bytes are ASCII");
            let Ok(secret) = Secret::from_text(text) else {
                continue;
            };
            let Ok(share_id) = secret.share_id() else {
                continue;
            };
            found = true;
            out.secrets.push(SecretCandidate {
                offset: start + i,
                level: secret.level(),
                secret,
                share_id,
            });
        }
    }
    if !found && run.len() >= FRAGMENT_MIN_LEN {
        out.fragments.push(SecretFragment {
            offset: start,
            text: String::from_utf8_lossy(run).into_owned(),
        });
    }
}

fn scan_tags(blob: &[u8], at: usize, out: &mut MemoryScan) {
    let rest = &blob[at..];
    if let Some(id) = rest.strip_prefix(PEER_ID_TAG).and_then(|r| r.get(..20)) {
        out.peer_ids.push(PeerIdCandidate {
            offset: at + PEER_ID_TAG.len(),
            peer_id: PeerId::from_slice(id).expect("20 bytes"),
        });
    }
    if let Some(r) = rest.strip_prefix(PORT_TAG) {
        let digits = r.iter().take(6).take_while(|b| b.is_ascii_digit()).count();
        if digits > 0 && r.get(digits) == Some(&b'e') {
            let port = std::str::from_utf8(&r[..digits]).ok().and_then(|s| s.parse::<u16>().ok());
            if let Some(port) = port.filter(|p| *p != 0) {
                out.ports.push(PortCandidate {
                    offset: at + PORT_TAG.len(),
                    port,
                });
            }
        }
    }
}

/// Scans positions `lo..hi`. Runs are attributed to the range holding
/// their first byte, so splitting the blob never splits a run.
fn scan_range(blob: &[u8], lo: usize, hi: usize) -> MemoryScan {
    let mut out = MemoryScan::default();
    let mut i = lo;
    while i < hi {
        let b = blob[i];
        if is_base32_byte(b) && (i == 0 || !is_base32_byte(blob[i - 1])) {
            let end = blob[i..].iter().position(|c| !is_base32_byte(*c)).map_or(blob.len(), |n| i + n);
            scan_run(blob, i, end, &mut out);
        }
        if b == PEER_ID_TAG[0] || b == PORT_TAG[0] {
            scan_tags(blob, i, &mut out);
        }
        i += 1;
    }
    out
}

const CHUNK: usize = 64 * 1024;

/// Searches a raw memory image for secrets (every 53-character Base32
/// window that decodes with a known access byte), shorter Base32 runs as
/// fragments, and bencoded `peer_id` / `port` values. Results are ordered
/// by offset.
#[cfg(feature = "parallel")]
pub fn scan_memory(blob: &[u8]) -> MemoryScan {
    use rayon::prelude::*;
    let ranges: Vec<usize> = (0..blob.len()).step_by(CHUNK).collect();
    let parts: Vec<MemoryScan> = ranges
        .par_iter()
        .map(|&lo| scan_range(blob, lo, (lo + CHUNK).min(blob.len())))
        .collect();
    let mut out = MemoryScan::default();
    for p in parts {
        out.extend(p);
    }
    out
}

#[cfg(not(feature = "parallel"))]
pub fn scan_memory(blob: &[u8]) -> MemoryScan {
    scan_memory_sequential(blob)
}

pub fn scan_memory_sequential(blob: &[u8]) -> MemoryScan {
    let mut out = MemoryScan::default();
    for lo in (0..blob.len()).step_by(CHUNK) {
        out.extend(scan_range(blob, lo, (lo + CHUNK).min(blob.len())));
    }
    out
}
