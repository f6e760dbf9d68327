//! The investigator engine: discovery over seized evidence, investigation
//! of local artifacts, enumeration of remote peers, recovery of target
//! files from them and verification into a reproducible report.

mod disk;
mod enumerate;
mod matrix;
mod memory;
mod pipeline;
mod recover;
mod report;
mod targets;

use std::collections::BTreeSet;
use std::io;
use std::net::SocketAddrV4;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{locate_artifacts, ArtifactError, ArtifactSet, OsProfile};
use crate::syncnet::{NetError, NetLog};

pub use disk::{analyze_disk, ArtifactIssue, LocalEvidence, ManifestEvidence, ShareLink, SyncIdEvidence};
pub use enumerate::{enumerate_peers, Enumeration};
pub use matrix::{applicability, corroborate, corroborate_parts, Applicability, Cell, CellStatus, CorroborationMatrix, EvidenceItem, EvidenceSource, MatrixRow, Verdict};
pub use memory::{scan_memory, scan_memory_sequential, MemoryScan, PeerIdCandidate, PortCandidate, SecretCandidate, SecretFragment};
pub use pipeline::{run_acquisition, Acquisition, AcquisitionOptions, Investigator};
pub use recover::{recover, CustodyAction, CustodyEntry, CustodyLog, EvidenceRecord, PieceSource, SourceContribution};
pub use report::{build_report, load_case, CaseMetadata, EvidenceReport, RecordSummary, ReportError};
pub use targets::{identify_targets, TargetFile, TargetReason};

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("no evidence sources supplied")]
    InsufficientSources,
    #[error("no eligible peers for recovery")]
    NoEligiblePeers,
    #[error("no secret grants access to share {0}")]
    NoSecret(String),
    #[error("no discovery method or known peer was given")]
    NothingToContact,
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

/// Which remote addresses recovery may contact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryPolicy {
    /// Only the investigator-approved addresses.
    KnownPeersOnly(BTreeSet<SocketAddrV4>),
    /// Any peer found during enumeration.
    Discovered,
}

impl RecoveryPolicy {
    pub fn allows(&self, addr: SocketAddrV4) -> bool {
        match self {
            RecoveryPolicy::KnownPeersOnly(list) => list.contains(&addr),
            RecoveryPolicy::Discovered => true,
        }
    }
}

/// The evidence sources an investigation starts from.
#[derive(Debug, Clone, Default)]
pub struct EntryPointBundle {
    pub disk: Option<ArtifactSet>,
    pub memory: Option<Vec<u8>>,
    pub network_log: Option<NetLog>,
    pub mobile: Option<ArtifactSet>,
}

impl EntryPointBundle {
    pub fn is_empty(&self) -> bool {
        self.disk.is_none() && self.memory.is_none() && self.network_log.is_none() && self.mobile.is_none()
    }

    /// Loads a seized node directory: `disk/` (artifact tree), `memory.bin`
    /// and `netlog.json`, each optional. A directory without `disk/` is
    /// treated as the artifact tree itself.
    pub fn from_dir(dir: &Path) -> Result<EntryPointBundle, AcquisitionError> {
        let disk_root = if dir.join("disk").is_dir() { dir.join("disk") } else { dir.to_path_buf() };
        let disk = detect_profile(&disk_root)
            .map(|p| locate_artifacts(&disk_root, p))
            .transpose()?
            .filter(|s| !s.is_empty());
        let memory = read_opt(&dir.join("memory.bin"))?;
        let network_log = match read_opt(&dir.join("netlog.json"))? {
            Some(bytes) => Some(serde_json::from_slice(&bytes).map_err(|source| AcquisitionError::Json {
                path: dir.join("netlog.json"),
                source,
            })?),
            None => None,
        };
        let mobile = [dir.join("mobile"), disk_root.join("mobile")]
            .into_iter()
            .find(|p| p.is_dir())
            .map(|p| locate_artifacts(&p, OsProfile::Ios))
            .transpose()?
            .filter(|s| !s.is_empty());
        Ok(EntryPointBundle {
            disk,
            memory,
            network_log,
            mobile,
        })
    }
}

fn read_opt(path: &Path) -> Result<Option<Vec<u8>>, AcquisitionError> {
    match std::fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(AcquisitionError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

/// The OS profile whose application directory exists under `root`, if any.
pub fn detect_profile(root: &Path) -> Option<OsProfile> {
    [OsProfile::Windows, OsProfile::MacOs, OsProfile::Linux, OsProfile::Ios]
        .into_iter()
        .find(|p| locate_artifacts(root, *p).is_ok_and(|s| s.app_dir.is_some()))
}
