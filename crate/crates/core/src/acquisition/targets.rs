use std::fmt;

use serde::{Deserialize, Serialize};

use crate::artifacts::{resolve_in_root, FileMeta};
use crate::digest::Hash20;
use crate::identity::ShareId;

use super::disk::LocalEvidence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TargetReason {
    /// `state=2`: deleted on the source system.
    DeletedLocally,
    /// `invalidated=1`: deleted or modified locally, frozen out of sync.
    Invalidated,
    /// Listed as present and valid but missing from the share folder.
    ListedOnly,
}

impl fmt::Display for TargetReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetReason::DeletedLocally => "DELETED_LOCALLY",
            TargetReason::Invalidated => "INVALIDATED",
            TargetReason::ListedOnly => "LISTED_ONLY",
        })
    }
}

/// A file whose original content must come from a remote peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetFile {
    pub share: ShareId,
    pub path: String,
    pub reason: TargetReason,
    pub size: u64,
    /// The manifest's `hash20`: for invalidated entries, the hash of the
    /// last valid version.
    pub expected_hash: Hash20,
    pub meta: Option<FileMeta>,
}

/// One target per manifest entry that is deleted, invalidated, or listed
/// but absent from a share folder found on disk. Ordered by share, then
/// path.
pub fn identify_targets(evidence: &LocalEvidence) -> Vec<TargetFile> {
    let mut out = Vec::new();
    for m in &evidence.manifests {
        let share = m.file_share_id;
        let folder = evidence
            .share(&share)
            .filter(|l| l.folder_found)
            .map(|l| resolve_in_root(&evidence.root, &l.config.path));
        for e in &m.manifest.files {
            let reason = if e.is_deleted() {
                TargetReason::DeletedLocally
            } else if e.invalidated {
                TargetReason::Invalidated
            } else if folder.as_ref().is_some_and(|f| !resolve_in_root(f, &e.path).is_file()) {
                TargetReason::ListedOnly
            } else {
                continue;
            };
            out.push(TargetFile {
                share,
                path: e.path.clone(),
                reason,
                size: e.size,
                expected_hash: e.hash20,
                meta: m.manifest.meta(&e.path).cloned(),
            });
        }
    }
    out.sort_by(|a, b| (a.share, &a.path).cmp(&(b.share, &b.path)));
    out
}
