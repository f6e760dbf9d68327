use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::artifacts::LogEventKind;
use crate::syncnet::NetLog;

use super::disk::LocalEvidence;
use super::memory::{scan_memory, MemoryScan};
use super::{analyze_disk, AcquisitionError, EntryPointBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvidenceItem {
    ShareId,
    Secret,
    PeerId,
    FileList,
    FileHash,
    RemotePeers,
    Ports,
}

impl EvidenceItem {
    pub const ALL: [EvidenceItem; 7] = [
        EvidenceItem::ShareId,
        EvidenceItem::Secret,
        EvidenceItem::PeerId,
        EvidenceItem::FileList,
        EvidenceItem::FileHash,
        EvidenceItem::RemotePeers,
        EvidenceItem::Ports,
    ];
}

impl fmt::Display for EvidenceItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvidenceItem::ShareId => "ShareID",
            EvidenceItem::Secret => "Secret",
            EvidenceItem::PeerId => "PeerID",
            EvidenceItem::FileList => "File List",
            EvidenceItem::FileHash => "File Hash",
            EvidenceItem::RemotePeers => "Remote Peers",
            EvidenceItem::Ports => "Ports",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvidenceSource {
    Network,
    Ram,
    SyncDat,
    SyncId,
    Db,
    SyncLog,
}

impl EvidenceSource {
    pub const ALL: [EvidenceSource; 6] = [
        EvidenceSource::Network,
        EvidenceSource::Ram,
        EvidenceSource::SyncDat,
        EvidenceSource::SyncId,
        EvidenceSource::Db,
        EvidenceSource::SyncLog,
    ];
}

impl fmt::Display for EvidenceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvidenceSource::Network => "Network",
            EvidenceSource::Ram => "RAM",
            EvidenceSource::SyncDat => "sync.dat",
            EvidenceSource::SyncId => ".SyncID",
            EvidenceSource::Db => "ShareID.db",
            EvidenceSource::SyncLog => "sync.log",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Applicability {
    Recoverable,
    PossiblyRecoverable,
    NotApplicable,
}

/// Where each item can be recovered from.
pub fn applicability(item: EvidenceItem, source: EvidenceSource) -> Applicability {
    use Applicability::{NotApplicable as N, PossiblyRecoverable as P, Recoverable as R};
    use EvidenceSource::*;
    let row = match item {
        EvidenceItem::ShareId => [R, R, R, R, N, R],
        EvidenceItem::Secret => [N, R, R, N, N, N],
        EvidenceItem::PeerId => [R, P, N, N, R, N],
        EvidenceItem::FileList => [N, P, N, N, R, R],
        EvidenceItem::FileHash => [N, P, N, N, R, N],
        EvidenceItem::RemotePeers => [R, P, N, N, R, R],
        EvidenceItem::Ports => [R, R, N, N, N, R],
    };
    row[match source {
        Network => 0,
        Ram => 1,
        SyncDat => 2,
        SyncId => 3,
        Db => 4,
        SyncLog => 5,
    }]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Found,
    NotFound,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub applicability: Applicability,
    pub status: CellStatus,
    pub values: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Agree { sources: Vec<EvidenceSource> },
    Conflict { values: BTreeMap<EvidenceSource, BTreeSet<String>> },
    SingleSource { source: EvidenceSource },
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub item: EvidenceItem,
    pub cells: BTreeMap<EvidenceSource, Cell>,
    pub verdict: Verdict,
}

impl MatrixRow {
    /// Found with identical values in at least two sources.
    pub fn corroborated(&self) -> bool {
        let found: Vec<&BTreeSet<String>> = self
            .cells
            .values()
            .filter(|c| c.status == CellStatus::Found)
            .map(|c| &c.values)
            .collect();
        found
            .iter()
            .enumerate()
            .any(|(i, a)| found[i + 1..].iter().any(|b| a == b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorroborationMatrix {
    pub rows: Vec<MatrixRow>,
}

impl CorroborationMatrix {
    pub fn row(&self, item: EvidenceItem) -> &MatrixRow {
        self.rows.iter().find(|r| r.item == item).expect("every item has a row")
    }

    pub fn cell(&self, item: EvidenceItem, source: EvidenceSource) -> &Cell {
        &self.row(item).cells[&source]
    }

    /// Fixed-width text rendering: one row per item, one column per source.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14}", "");
        for s in EvidenceSource::ALL {
            out += &format!("{:<12}", s.to_string());
        }
        out += "verdict\n";
        for r in &self.rows {
            out += &format!("{:<14}", r.item.to_string());
            for s in EvidenceSource::ALL {
                let c = &r.cells[&s];
                let mark = match c.status {
                    CellStatus::Found => format!("found({})", c.values.len()),
                    CellStatus::NotFound => "-".to_string(),
                    CellStatus::NotApplicable => "n/a".to_string(),
                };
                out += &format!("{mark:<12}");
            }
            out += match &r.verdict {
                Verdict::Agree { .. } => "AGREE",
                Verdict::Conflict { .. } => "CONFLICT",
                Verdict::SingleSource { .. } => "SINGLE_SOURCE",
                Verdict::Absent => "ABSENT",
            };
            out.push('\n');
        }
        out
    }
}

/// Builds the matrix from a bundle, parsing its disk and memory sources.
pub fn corroborate(bundle: &EntryPointBundle) -> Result<CorroborationMatrix, AcquisitionError> {
    if bundle.is_empty() {
        return Err(AcquisitionError::InsufficientSources);
    }
    let disks: Vec<LocalEvidence> = bundle.disk.iter().chain(&bundle.mobile).map(analyze_disk).collect();
    let scan = bundle.memory.as_deref().map(scan_memory);
    Ok(corroborate_parts(&disks, scan.as_ref(), bundle.network_log.as_ref()))
}

type Values = BTreeSet<String>;

fn hex_set<T: fmt::Display>(it: impl IntoIterator<Item = T>) -> Values {
    it.into_iter().map(|v| v.to_string()).collect()
}

/// Builds the matrix from already parsed sources. Disk trees (desktop and
/// mobile) share the artifact columns.
pub fn corroborate_parts(disks: &[LocalEvidence], scan: Option<&MemoryScan>, net: Option<&NetLog>) -> CorroborationMatrix {
    let mut found: BTreeMap<(EvidenceItem, EvidenceSource), Values> = BTreeMap::new();
    let mut put = |item, source, values: Values| {
        found.entry((item, source)).or_default().extend(values);
    };
    use EvidenceItem as I;
    use EvidenceSource as S;

    if let Some(net) = net {
        let msgs = &net.messages;
        put(I::ShareId, S::Network, hex_set(msgs.iter().filter_map(|m| m.share)));
        put(
            I::PeerId,
            S::Network,
            hex_set(msgs.iter().filter(|m| m.from == net.local).filter_map(|m| m.peer_id)),
        );
        put(
            I::RemotePeers,
            S::Network,
            hex_set(msgs.iter().filter(|m| m.from != net.local).filter_map(|m| m.peer_id)),
        );
        if !msgs.is_empty() {
            put(I::Ports, S::Network, hex_set([net.local.port()]));
        }
    }
    if let Some(scan) = scan {
        put(I::Secret, S::Ram, hex_set(scan.secrets.iter().map(|c| c.secret.to_text())));
        put(I::ShareId, S::Ram, hex_set(scan.secrets.iter().map(|c| c.share_id)));
        put(I::PeerId, S::Ram, hex_set(scan.peer_ids.iter().map(|c| c.peer_id)));
        put(I::Ports, S::Ram, hex_set(scan.ports.iter().map(|c| c.port)));
    }
    for d in disks {
        for cfg in d.sync_dat.iter().flat_map(|s| &s.folders) {
            put(I::Secret, S::SyncDat, hex_set([cfg.secret.to_text()]));
            if let Ok(id) = cfg.secret.share_id() {
                put(I::ShareId, S::SyncDat, hex_set([id]));
            }
        }
        put(I::ShareId, S::SyncId, hex_set(d.sync_ids.iter().map(|s| s.share_id)));
        for m in &d.manifests {
            let man = &m.manifest;
            put(I::PeerId, S::Db, hex_set(man.peer_id));
            put(I::FileList, S::Db, man.files.iter().map(|f| f.path.clone()).collect());
            put(
                I::FileHash,
                S::Db,
                man.files.iter().map(|f| format!("{}:{}", f.path, f.hash20)).collect(),
            );
            put(
                I::RemotePeers,
                S::Db,
                hex_set(man.files.iter().filter_map(|f| f.peer).filter(|p| Some(*p) != man.peer_id)),
            );
        }
        if let Some(log) = &d.log {
            let ev = &log.events;
            put(I::ShareId, S::SyncLog, hex_set(ev.iter().filter_map(|e| e.share)));
            put(I::FileList, S::SyncLog, ev.iter().filter_map(|e| e.path.clone()).collect());
            put(I::RemotePeers, S::SyncLog, hex_set(ev.iter().filter_map(|e| e.peer_id)));
            let ports = ev
                .iter()
                .filter(|e| e.event == LogEventKind::SyncStart)
                .filter_map(|e| e.host.as_deref())
                .filter_map(|h| h.rsplit_once(':').and_then(|(_, p)| p.parse::<u16>().ok()));
            put(I::Ports, S::SyncLog, hex_set(ports));
        }
    }

    let rows = EvidenceItem::ALL
        .into_iter()
        .map(|item| {
            let cells: BTreeMap<EvidenceSource, Cell> = EvidenceSource::ALL
                .into_iter()
                .map(|source| {
                    let app = applicability(item, source);
                    let values = found.remove(&(item, source)).unwrap_or_default();
                    let (status, values, note) = match app {
                        Applicability::NotApplicable => (CellStatus::NotApplicable, Values::new(), None),
                        _ if !values.is_empty() => (CellStatus::Found, values, None),
                        Applicability::PossiblyRecoverable => (
                            CellStatus::NotFound,
                            values,
                            Some("no layout known for this item in memory; not extracted".to_string()),
                        ),
                        Applicability::Recoverable => (CellStatus::NotFound, values, None),
                    };
                    (
                        source,
                        Cell {
                            applicability: app,
                            status,
                            values,
                            note,
                        },
                    )
                })
                .collect();
            let verdict = verdict(&cells);
            MatrixRow { item, cells, verdict }
        })
        .collect();
    CorroborationMatrix { rows }
}

fn verdict(cells: &BTreeMap<EvidenceSource, Cell>) -> Verdict {
    let found: Vec<(EvidenceSource, &Values)> = cells
        .iter()
        .filter(|(_, c)| c.status == CellStatus::Found)
        .map(|(s, c)| (*s, &c.values))
        .collect();
    match found.as_slice() {
        [] => Verdict::Absent,
        [(source, _)] => Verdict::SingleSource { source: *source },
        [(_, first), rest @ ..] if rest.iter().all(|(_, v)| v == first) => Verdict::Agree {
            sources: found.iter().map(|(s, _)| *s).collect(),
        },
        _ => Verdict::Conflict {
            values: found.iter().map(|(s, v)| (*s, (*v).clone())).collect(),
        },
    }
}
