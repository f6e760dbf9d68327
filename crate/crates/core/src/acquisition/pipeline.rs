use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddrV4;

use crate::identity::{PeerId, Secret, ShareId};
use crate::syncnet::{merge_peer_records, DiscoverySource, Network, NodeId, NodeState, PeerRecord};

use super::disk::{analyze_disk, LocalEvidence};
use super::enumerate::{enumerate_peers, Enumeration};
use super::matrix::{corroborate_parts, CorroborationMatrix};
use super::memory::{scan_memory, MemoryScan};
use super::recover::{recover, unrecovered, EvidenceRecord};
use super::report::{build_report, CaseMetadata, EvidenceReport};
use super::targets::{identify_targets, TargetFile};
use super::{AcquisitionError, EntryPointBundle, RecoveryPolicy};

/// The forensic workstation's node on the network. It holds no shares
/// and takes no part in the DHT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Investigator {
    pub id: NodeId,
    pub addr: SocketAddrV4,
}

impl Investigator {
    pub fn attach(net: &mut Network, addr: SocketAddrV4, lan: &str) -> Investigator {
        let mut node = NodeState::new("investigator", PeerId([0xF0; 20]), addr, lan);
        node.dht_participant = false;
        let id = net.add_node(node);
        Investigator { id, addr }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AcquisitionOptions {
    pub methods: BTreeSet<DiscoverySource>,
    /// When non-empty, recovery runs under the known peers policy.
    pub known_peers: BTreeSet<SocketAddrV4>,
    /// Secrets supplied by the investigator in addition to those found.
    pub secrets: Vec<Secret>,
    pub case: CaseMetadata,
}

impl AcquisitionOptions {
    pub fn policy(&self) -> RecoveryPolicy {
        if self.known_peers.is_empty() {
            RecoveryPolicy::Discovered
        } else {
            RecoveryPolicy::KnownPeersOnly(self.known_peers.clone())
        }
    }
}

#[derive(Debug, Clone)]
pub struct Acquisition {
    pub disks: Vec<LocalEvidence>,
    pub scan: Option<MemoryScan>,
    pub matrix: CorroborationMatrix,
    pub targets: Vec<TargetFile>,
    pub enumerations: BTreeMap<ShareId, Enumeration>,
    pub records: Vec<EvidenceRecord>,
    pub report: EvidenceReport,
}

fn find_secret(share: &ShareId, disks: &[LocalEvidence], scan: Option<&MemoryScan>, extra: &[Secret]) -> Option<(Secret, &'static str)> {
    let from_disk = disks.iter().find_map(|d| d.share(share)).map(|l| l.config.secret.clone());
    let from_ram = scan
        .into_iter()
        .flat_map(|s| &s.secrets)
        .find(|c| c.share_id == *share)
        .map(|c| c.secret.clone());
    let given = extra.iter().find(|s| s.share_id().ok() == Some(*share)).cloned();
    from_disk
        .map(|s| (s, "sync.dat"))
        .or(from_ram.map(|s| (s, "memory")))
        .or(given.map(|s| (s, "investigator")))
}

/// Discovery, investigation, enumeration, recovery and verification over
/// one seized bundle, driving `net` from the investigator node.
pub fn run_acquisition(
    bundle: &EntryPointBundle,
    net: &mut Network,
    inv: &Investigator,
    opts: &AcquisitionOptions,
) -> Result<Acquisition, AcquisitionError> {
    if bundle.is_empty() {
        return Err(AcquisitionError::InsufficientSources);
    }
    if opts.methods.is_empty() && opts.known_peers.is_empty() {
        return Err(AcquisitionError::NothingToContact);
    }
    let mut findings = Vec::new();

    // Discovery
    let disks: Vec<LocalEvidence> = bundle.disk.iter().chain(&bundle.mobile).map(analyze_disk).collect();
    let scan = bundle.memory.as_deref().map(scan_memory);
    for d in &disks {
        findings.push(format!(
            "disk ({} layout): {} configured share(s), {} manifest(s), {} .SyncID file(s), sync.log {}",
            d.profile,
            d.shares.len(),
            d.manifests.len(),
            d.sync_ids.len(),
            if d.log.is_some() { "present" } else { "absent" }
        ));
        for i in &d.issues {
            findings.push(format!("unreadable artifact {}: {}", i.path, i.error));
        }
        for l in &d.shares {
            for i in &l.issues {
                findings.push(format!("share {} inconsistent: {i}", l.folder));
            }
        }
    }
    if let Some(s) = &scan {
        findings.push(format!(
            "memory: {} secret(s), {} fragment(s), {} PeerID(s), {} port value(s)",
            s.secrets.len(),
            s.fragments.len(),
            s.peer_ids.len(),
            s.ports.len()
        ));
    }
    if let Some(n) = &bundle.network_log {
        findings.push(format!("network log at {}: {} message(s)", n.local, n.messages.len()));
    }

    // Investigation
    let matrix = corroborate_parts(&disks, scan.as_ref(), bundle.network_log.as_ref());
    let mut targets: Vec<TargetFile> = disks.iter().flat_map(identify_targets).collect();
    targets.sort_by(|a, b| (a.share, &a.path).cmp(&(b.share, &b.path)));
    targets.dedup_by(|a, b| a.share == b.share && a.path == b.path);
    for t in &targets {
        findings.push(format!("target {} in share {}: {} (expected SHA1 {})", t.path, t.share, t.reason, t.expected_hash));
    }

    // Enumeration
    let policy = opts.policy();
    let mut methods = opts.methods.clone();
    if matches!(policy, RecoveryPolicy::KnownPeersOnly(_)) {
        let skipped: Vec<String> = methods
            .iter()
            .filter(|m| matches!(m, DiscoverySource::Multicast | DiscoverySource::Tracker | DiscoverySource::Dht))
            .map(|m| m.to_string())
            .collect();
        if !skipped.is_empty() {
            findings.push(format!("known peers policy: network discovery skipped ({})", skipped.join(", ")));
        }
        methods.retain(|m| matches!(m, DiscoverySource::KnownHosts | DiscoverySource::SyncLogHistory));
    }
    let shares: BTreeSet<ShareId> = targets.iter().map(|t| t.share).collect();
    let exclude = BTreeSet::from([inv.addr]);
    let mut enumerations = BTreeMap::new();
    for share in &shares {
        let evidence = disks.iter().find(|d| d.share(share).is_some() || d.manifest_for(share).is_some());
        let e = enumerate_peers(net, inv.id, *share, &methods, evidence, &exclude);
        findings.push(format!("share {share}: {} peer(s) enumerated", e.peers.len()));
        for p in &e.peers {
            let sources: Vec<String> = p.sources.iter().map(|s| s.to_string()).collect();
            let id = p.peer_id.map(|i| i.to_string()).unwrap_or_else(|| "unknown".into());
            findings.push(format!("  peer {} ({id}) via {}", p.addr, sources.join(", ")));
        }
        for n in &e.notes {
            findings.push(format!("  {n}"));
        }
        enumerations.insert(*share, e);
    }

    // Recovery
    let mut records = Vec::new();
    for t in &targets {
        let Some((secret, origin)) = find_secret(&t.share, &disks, scan.as_ref(), &opts.secrets) else {
            findings.push(format!("no secret for share {}; {} not recovered", t.share, t.path));
            records.push(unrecovered(net, t, "no secret for this share"));
            continue;
        };
        let mut peers: Vec<PeerRecord> = enumerations.get(&t.share).map(|e| e.peers.clone()).unwrap_or_default();
        peers.extend(
            opts.known_peers
                .iter()
                .map(|a| PeerRecord::new(None, *a, DiscoverySource::KnownHosts)),
        );
        let peers = merge_peer_records(peers);
        match recover(net, inv.id, t, &peers, &secret, &policy) {
            Ok(r) => {
                findings.push(format!(
                    "{}: {} using the {} secret from {origin}",
                    t.path,
                    r.verification.status,
                    secret.level()
                ));
                records.push(r);
            }
            Err(AcquisitionError::NoEligiblePeers) => {
                findings.push(format!("{}: no eligible peers", t.path));
                records.push(unrecovered(net, t, "no eligible peers"));
            }
            Err(e) => return Err(e),
        }
    }

    // Verification
    let report = build_report(&records, &matrix, &opts.case, findings)?;
    Ok(Acquisition {
        disks,
        scan,
        matrix,
        targets,
        enumerations,
        records,
        report,
    })
}
