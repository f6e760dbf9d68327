use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{resolve_in_root, FileMeta};
use crate::digest::Hash20;
use crate::identity::ShareId;
use crate::integrity::{PieceMap, VerificationResult, VerificationStatus};

use super::matrix::{CorroborationMatrix, Verdict};
use super::recover::{assess, CustodyAction, CustodyLog, EvidenceRecord, SourceContribution};
use super::targets::TargetReason;

pub const REPORT_FORMAT: &str = "syncprobe-report/1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("re-verification of {path} failed: {reason}")]
    ReverificationFailed { path: String, reason: String },
    #[error("report digest {stored} does not match recomputed {computed}")]
    DigestMismatch { stored: Hash20, computed: Hash20 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseMetadata {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examiner: Option<String>,
    /// Label of the seized evidence, e.g. the host name.
    pub evidence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceSummary {
    pub index: u64,
    pub sha1: Hash20,
    pub source: std::net::SocketAddrV4,
    pub response_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub share: ShareId,
    pub path: String,
    pub reason: TargetReason,
    pub size: u64,
    pub expected_hash: Hash20,
    pub piece_len: u64,
    pub piece_hashes: Vec<Hash20>,
    pub aggregate_hash: Hash20,
    pub verification: VerificationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovered_sha1: Option<Hash20>,
    /// Location of the recovered bytes inside the case directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovered_file: Option<String>,
    pub pieces: Vec<PieceSummary>,
    pub sources: Vec<SourceContribution>,
    pub custody: CustodyLog,
}

impl RecordSummary {
    fn meta(&self) -> FileMeta {
        FileMeta {
            path: self.path.clone(),
            size: self.size,
            piece_len: self.piece_len,
            piece_hashes: self.piece_hashes.clone(),
            aggregate_hash: self.aggregate_hash,
            extra: Default::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub targets: usize,
    pub full_match: usize,
    pub partial: usize,
    pub mismatch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub format: String,
    pub case: CaseMetadata,
    pub summary: ReportSummary,
    /// Investigation findings in the order they were made.
    pub findings: Vec<String>,
    pub matrix: CorroborationMatrix,
    pub records: Vec<RecordSummary>,
    /// SHA1 of the canonical JSON of this report with this field absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<Hash20>,
}

fn storage_name(share: &ShareId, path: &str) -> String {
    format!("recovered/{share}/{path}")
}

/// Re-derives a record's verification from its bytes and checks every
/// piece against the custody entry that delivered it.
fn reverify(r: &EvidenceRecord) -> Result<(), ReportError> {
    let fail = |reason: String| ReportError::ReverificationFailed {
        path: r.target.path.clone(),
        reason,
    };
    let again = assess(&r.pieces, &r.meta, &r.target.expected_hash);
    if again != r.verification {
        return Err(fail(format!(
            "stored result {} but bytes now give {}",
            r.verification.status, again.status
        )));
    }
    for (index, bytes) in &r.pieces {
        let src = r
            .piece_sources
            .get(index)
            .ok_or_else(|| fail(format!("piece {index} has no recorded source")))?;
        let entry = r
            .custody
            .entries
            .get(src.response_seq as usize)
            .filter(|e| e.action == CustodyAction::PieceResponse && e.index == Some(*index))
            .ok_or_else(|| fail(format!("piece {index} has no custody response")))?;
        if entry.digest != Some(Hash20::of(bytes)) || entry.peer != Some(src.peer) {
            return Err(fail(format!("piece {index} differs from what {} sent", src.peer)));
        }
    }
    Ok(())
}

/// Canonical form: JSON with object keys sorted and no whitespace.
fn canonical(report: &EvidenceReport) -> Vec<u8> {
    let mut copy = report.clone();
    copy.digest = None;
    let value = serde_json::to_value(&copy).expect("report serializes");
    serde_json::to_vec(&value).expect("value serializes")
}

impl EvidenceReport {
    pub fn compute_digest(&self) -> Hash20 {
        Hash20::of(&canonical(self))
    }

    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&value).expect("value serializes") + "\n"
    }

    /// The least favourable outcome across records; `None` when there are
    /// none.
    pub fn worst_status(&self) -> Option<VerificationStatus> {
        let s = &self.summary;
        if s.targets == 0 {
            None
        } else if s.mismatch > 0 {
            Some(VerificationStatus::Mismatch)
        } else if s.partial > 0 {
            Some(VerificationStatus::Partial)
        } else {
            Some(VerificationStatus::FullMatch)
        }
    }

    /// Human-readable account of the acquisition.
    pub fn narrative(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Case {}: evidence {}", self.case.case_id, self.case.evidence);
        if let Some(ex) = &self.case.examiner {
            let _ = writeln!(s, "Examiner: {ex}");
        }
        if let Some(d) = self.digest {
            let _ = writeln!(s, "Report digest: {d}");
        }
        let _ = writeln!(s, "\nFindings:");
        for f in &self.findings {
            let _ = writeln!(s, "  - {f}");
        }
        let _ = writeln!(s, "\nCorroboration:");
        for line in self.matrix.to_table().lines() {
            let _ = writeln!(s, "  {line}");
        }
        for r in &self.matrix.rows {
            if let Verdict::Conflict { values } = &r.verdict {
                for (src, v) in values {
                    let _ = writeln!(s, "  {} conflict, {src}: {}", r.item, v.iter().cloned().collect::<Vec<_>>().join(", "));
                }
            }
        }
        if self.records.is_empty() {
            let _ = writeln!(s, "\nNo recoverable targets were identified.");
            return s;
        }
        let _ = writeln!(s, "\nRecovered evidence:");
        for r in &self.records {
            let _ = writeln!(
                s,
                "  {} ({}, share {}): {}",
                r.path, r.reason, r.share, r.verification.status
            );
            let _ = writeln!(s, "    expected SHA1 {}", r.expected_hash);
            if let Some(h) = r.recovered_sha1 {
                let _ = writeln!(s, "    recovered SHA1 {h}");
            }
            let total = r.piece_hashes.len();
            let _ = writeln!(s, "    pieces verified {}/{total}", r.verification.verified_pieces.len());
            if !r.verification.missing_pieces.is_empty() {
                let _ = writeln!(s, "    missing pieces {:?}", r.verification.missing_pieces);
            }
            for src in &r.sources {
                let id = src.peer_id.map(|p| p.to_string()).unwrap_or_else(|| "unknown".into());
                let _ = writeln!(s, "    source {} (peer {id}) pieces {:?}", src.addr, src.pieces);
            }
            let _ = writeln!(s, "    custody log:");
            for e in &r.custody.entries {
                let mut line = format!("      [{:>4}] t={}ms {}", e.seq, e.t_ms, e.action);
                if let Some(p) = e.peer {
                    let _ = write!(line, " peer={p}");
                }
                if let Some(i) = e.index {
                    let _ = write!(line, " piece={i}");
                }
                if let Some(d) = e.digest {
                    let _ = write!(line, " sha1={d}");
                }
                if let Some(d) = &e.detail {
                    let _ = write!(line, " ({d})");
                }
                let _ = writeln!(s, "{line}");
            }
        }
        s
    }

    /// Writes `report.json`, `report.txt` and the recovered bytes under
    /// `dir`.
    pub fn write_case(&self, records: &[EvidenceRecord], dir: &Path) -> Result<(), ReportError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ReportError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for r in records {
            let Some(bytes) = r.bytes() else {
                for (i, p) in &r.pieces {
                    let f = resolve_in_root(dir, &format!("{}.piece{i}", storage_name(&r.target.share, &r.target.path)));
                    write_file(&f, p).map_err(io_err(&f))?;
                }
                continue;
            };
            let f = resolve_in_root(dir, &storage_name(&r.target.share, &r.target.path));
            write_file(&f, &bytes).map_err(io_err(&f))?;
        }
        let json = dir.join("report.json");
        fs::write(&json, self.to_json()).map_err(io_err(&json))?;
        let txt = dir.join("report.txt");
        fs::write(&txt, self.narrative()).map_err(io_err(&txt))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)
}

/// Re-verifies every record and assembles the report.
pub fn build_report(
    records: &[EvidenceRecord],
    matrix: &CorroborationMatrix,
    case: &CaseMetadata,
    findings: Vec<String>,
) -> Result<EvidenceReport, ReportError> {
    let mut summary = ReportSummary {
        targets: records.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for r in records {
        reverify(r)?;
        match r.verification.status {
            VerificationStatus::FullMatch => summary.full_match += 1,
            VerificationStatus::Partial => summary.partial += 1,
            VerificationStatus::Mismatch => summary.mismatch += 1,
        }
        let bytes = r.bytes();
        out.push(RecordSummary {
            share: r.target.share,
            path: r.target.path.clone(),
            reason: r.target.reason,
            size: r.meta.size,
            expected_hash: r.target.expected_hash,
            piece_len: r.meta.piece_len,
            piece_hashes: r.meta.piece_hashes.clone(),
            aggregate_hash: r.meta.aggregate_hash,
            verification: r.verification.clone(),
            recovered_sha1: bytes.as_deref().map(Hash20::of),
            recovered_file: bytes.map(|_| storage_name(&r.target.share, &r.target.path)),
            pieces: r
                .pieces
                .iter()
                .map(|(i, p)| PieceSummary {
                    index: *i,
                    sha1: Hash20::of(p),
                    source: r.piece_sources[i].peer,
                    response_seq: r.piece_sources[i].response_seq,
                })
                .collect(),
            sources: r.sources.clone(),
            custody: r.custody.clone(),
        });
    }
    let mut report = EvidenceReport {
        format: REPORT_FORMAT.to_string(),
        case: case.clone(),
        summary,
        findings,
        matrix: matrix.clone(),
        records: out,
        digest: None,
    };
    report.digest = Some(report.compute_digest());
    Ok(report)
}

/// Loads a case directory written by [`EvidenceReport::write_case`] and
/// re-verifies its digest and every recovered byte on disk.
pub fn load_case(dir: &Path) -> Result<EvidenceReport, ReportError> {
    let json = dir.join("report.json");
    let text = fs::read(&json).map_err(|source| ReportError::Io {
        path: json.clone(),
        source,
    })?;
    let report: EvidenceReport = serde_json::from_slice(&text).map_err(|source| ReportError::Json {
        path: json.clone(),
        source,
    })?;
    let computed = report.compute_digest();
    if report.digest != Some(computed) {
        return Err(ReportError::DigestMismatch {
            stored: report.digest.unwrap_or_default(),
            computed,
        });
    }
    for r in &report.records {
        let fail = |reason: String| ReportError::ReverificationFailed {
            path: r.path.clone(),
            reason,
        };
        let mut pieces = PieceMap::new();
        if let Some(rel) = &r.recovered_file {
            let f = resolve_in_root(dir, rel);
            let bytes = fs::read(&f).map_err(|e| fail(format!("{rel}: {e}")))?;
            pieces = crate::integrity::split_pieces(&bytes, r.piece_len);
            if bytes.is_empty() {
                pieces.clear();
            }
        } else {
            for p in &r.pieces {
                let rel = format!("{}.piece{}", storage_name(&r.share, &r.path), p.index);
                let bytes = fs::read(resolve_in_root(dir, &rel)).map_err(|e| fail(format!("{rel}: {e}")))?;
                pieces.insert(p.index, bytes);
            }
        }
        let again = assess(&pieces, &r.meta(), &r.expected_hash);
        if again != r.verification {
            return Err(fail(format!(
                "report says {} but the stored bytes give {}",
                r.verification.status, again.status
            )));
        }
    }
    Ok(report)
}
