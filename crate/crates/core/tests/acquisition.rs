use std::collections::BTreeSet;
use std::net::SocketAddrV4;
use std::path::Path;

use syncprobe_core::acquisition::{
    analyze_disk, build_report, corroborate, identify_targets, load_case, run_acquisition, Acquisition,
    AcquisitionError, AcquisitionOptions, CaseMetadata, CellStatus, CustodyAction, EntryPointBundle, EvidenceItem,
    EvidenceSource, Investigator, ReportError, TargetReason, Verdict,
};
use syncprobe_core::artifacts::{locate_artifacts, write_sync_id, OsProfile};
use syncprobe_core::digest::Hash20;
use syncprobe_core::identity::ShareId;
use syncprobe_core::integrity::VerificationStatus;
use syncprobe_core::syncnet::{DiscoverySource, ScenarioRun, ScenarioSpec};

const POC: &str = include_str!("../../cli/scenarios/poc.json");
const POC_OFFLINE: &str = include_str!("../../cli/scenarios/poc_offline.json");
const PARTIAL: &str = include_str!("../../cli/scenarios/partial.json");
const BYZANTINE: &str = include_str!("../../cli/scenarios/byzantine.json");

fn inv_addr() -> SocketAddrV4 {
    "10.99.0.1:3839".parse().unwrap()
}

/// Runs `scenario`, writes its outputs to `out`, and returns the live run.
fn simulate(scenario: &str, out: &Path) -> ScenarioRun {
    let spec = ScenarioSpec::from_json(scenario).unwrap();
    let mut run = spec.build().unwrap();
    run.run();
    run.write_outputs(out).unwrap();
    run
}

fn addr_of(run: &ScenarioRun, node: &str) -> SocketAddrV4 {
    run.net.node(run.node(node).unwrap()).addr
}

fn acquire(run: &mut ScenarioRun, out: &Path, node: &str, known: &[&str], methods: &[DiscoverySource]) -> Acquisition {
    let bundle = EntryPointBundle::from_dir(&out.join(node)).unwrap();
    let lan = run.net.node(run.node(node).unwrap()).lan.clone();
    let inv = Investigator::attach(&mut run.net, inv_addr(), &lan);
    let opts = AcquisitionOptions {
        methods: methods.iter().copied().collect(),
        known_peers: known.iter().map(|n| addr_of(run, n)).collect(),
        secrets: Vec::new(),
        case: CaseMetadata {
            case_id: "test".into(),
            evidence: node.into(),
            ..Default::default()
        },
    };
    run_acquisition(&bundle, &mut run.net, &inv, &opts).unwrap()
}

#[test]
fn poc_disk_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let run = simulate(POC, dir.path());
    let bundle = EntryPointBundle::from_dir(&dir.path().join("ComputerB")).unwrap();
    let set = bundle.disk.as_ref().unwrap();
    assert_eq!(set.profile, OsProfile::MacOs);
    let ev = analyze_disk(set);
    assert!(ev.issues.is_empty(), "{:?}", ev.issues);
    assert_eq!(ev.shares.len(), 1);
    let link = &ev.shares[0];
    assert!(link.consistent && link.folder_found);
    assert_eq!(Some(link.share_id), run.share_id("evidence"));
    let m = ev.manifest_for(&link.share_id).unwrap();
    let three = m.entry("badfilethree.txt").unwrap();
    assert!(three.invalidated);
    assert!(m.entry("badfileone.txt").is_none());

    let targets = identify_targets(&ev);
    assert_eq!(targets.len(), 1);
    assert_eq!(targets[0].path, "badfilethree.txt");
    assert_eq!(targets[0].reason, TargetReason::Invalidated);
    assert_eq!(targets[0].expected_hash, three.hash20);
}

#[test]
fn master_side_targets_deleted_file() {
    let dir = tempfile::tempdir().unwrap();
    simulate(POC, dir.path());
    let bundle = EntryPointBundle::from_dir(&dir.path().join("ComputerA")).unwrap();
    let targets = identify_targets(&analyze_disk(bundle.disk.as_ref().unwrap()));
    assert_eq!(targets.len(), 1);
    assert_eq!(targets[0].path, "badfileone.txt");
    assert_eq!(targets[0].reason, TargetReason::DeletedLocally);
}

#[test]
fn sync_dat_only_tree() {
    let dir = tempfile::tempdir().unwrap();
    simulate(POC, dir.path());
    let app = dir.path().join("ComputerB/disk/Users/bob/Library/Application Support/BitTorrent Sync");
    let only = tempfile::tempdir().unwrap();
    let dst = only.path().join("Users/bob/Library/Application Support/BitTorrent Sync");
    std::fs::create_dir_all(&dst).unwrap();
    std::fs::copy(app.join("sync.dat"), dst.join("sync.dat")).unwrap();
    let ev = analyze_disk(&locate_artifacts(only.path(), OsProfile::MacOs).unwrap());
    assert!(ev.sync_dat.is_some());
    assert!(ev.manifests.is_empty());
    assert_eq!(ev.shares.len(), 1);
    assert!(identify_targets(&ev).is_empty());
}

#[test]
fn mismatched_sync_id_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    simulate(POC, dir.path());
    let folder = dir.path().join("ComputerB/disk/Users/bob/Documents/evidence");
    std::fs::write(folder.join(".SyncID"), write_sync_id(&ShareId([7; 20]))).unwrap();
    let bundle = EntryPointBundle::from_dir(&dir.path().join("ComputerB")).unwrap();
    let ev = analyze_disk(bundle.disk.as_ref().unwrap());
    assert!(!ev.shares[0].consistent);
    let m = corroborate(&bundle).unwrap();
    match &m.row(EvidenceItem::ShareId).verdict {
        Verdict::Conflict { values } => {
            assert!(values[&EvidenceSource::SyncId].contains(&ShareId([7; 20]).to_string()));
            assert!(values[&EvidenceSource::SyncDat].contains(&ev.shares[0].share_id.to_string()));
        }
        v => panic!("expected conflict, got {v:?}"),
    }
}

#[test]
fn poc_matrix() {
    let dir = tempfile::tempdir().unwrap();
    simulate(POC, dir.path());
    let bundle = EntryPointBundle::from_dir(&dir.path().join("ComputerB")).unwrap();
    let m = corroborate(&bundle).unwrap();
    assert!(matches!(m.row(EvidenceItem::Secret).verdict, Verdict::Agree { .. }));
    assert_eq!(
        m.cell(EvidenceItem::Secret, EvidenceSource::SyncLog).status,
        CellStatus::NotApplicable
    );
    for item in [EvidenceItem::ShareId, EvidenceItem::PeerId, EvidenceItem::FileList, EvidenceItem::RemotePeers, EvidenceItem::Ports] {
        assert!(m.row(item).corroborated(), "{item}: {:?}", m.row(item));
    }
}

#[test]
fn poc_recovery_full_match() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = simulate(POC, dir.path());
    let acq = acquire(&mut run, dir.path(), "ComputerB", &["ComputerA"], &[]);
    assert_eq!(acq.records.len(), 1);
    let r = &acq.records[0];
    assert_eq!(r.verification.status, VerificationStatus::FullMatch);
    let share = run.share_id("evidence").unwrap();
    let a = run.node("ComputerA").unwrap();
    let original = &run.net.node(a).share(&share).unwrap().content["badfilethree.txt"].bytes;
    assert_eq!(r.bytes().as_ref(), Some(original));
    assert_eq!(Hash20::of(original), r.target.expected_hash);
    assert_eq!(r.sources.len(), 1);
    assert_eq!(r.sources[0].addr, addr_of(&run, "ComputerA"));
    assert_eq!(acq.report.summary.full_match, 1);

    // containment
    let allowed = addr_of(&run, "ComputerA");
    assert!(run.net.trace().iter().filter(|t| t.from == inv_addr()).all(|t| t.to == allowed));
}

#[test]
fn poc_report_is_deterministic_and_verifiable() {
    let digests: BTreeSet<_> = (0..3)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let mut run = simulate(POC, dir.path());
            let acq = acquire(&mut run, dir.path(), "ComputerB", &["ComputerA"], &[]);
            let case = dir.path().join("case");
            acq.report.write_case(&acq.records, &case).unwrap();
            let loaded = load_case(&case).unwrap();
            assert_eq!(loaded, acq.report);
            acq.report.digest.unwrap()
        })
        .collect();
    assert_eq!(digests.len(), 1);
}

#[test]
fn tampering_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = simulate(POC, dir.path());
    let acq = acquire(&mut run, dir.path(), "ComputerB", &["ComputerA"], &[]);
    let mut records = acq.records.clone();
    records[0].pieces.get_mut(&0).unwrap()[0] ^= 1;
    assert!(matches!(
        build_report(&records, &acq.matrix, &acq.report.case, Vec::new()),
        Err(ReportError::ReverificationFailed { .. })
    ));

    let case = dir.path().join("case");
    acq.report.write_case(&acq.records, &case).unwrap();
    let share = run.share_id("evidence").unwrap();
    let f = case.join(format!("recovered/{share}/badfilethree.txt"));
    let mut bytes = std::fs::read(&f).unwrap();
    bytes[3] ^= 0x20;
    std::fs::write(&f, bytes).unwrap();
    assert!(matches!(load_case(&case), Err(ReportError::ReverificationFailed { .. })));
}

#[test]
fn empty_records_report() {
    let dir = tempfile::tempdir().unwrap();
    simulate(POC, dir.path());
    let bundle = EntryPointBundle::from_dir(&dir.path().join("ComputerB")).unwrap();
    let m = corroborate(&bundle).unwrap();
    let r = build_report(&[], &m, &CaseMetadata::default(), Vec::new()).unwrap();
    assert_eq!(r.summary.targets, 0);
    assert!(r.narrative().contains("No recoverable targets"));
    assert_eq!(r.worst_status(), None);
}

#[test]
fn offline_source_gives_partial() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = simulate(POC_OFFLINE, dir.path());
    let acq = acquire(&mut run, dir.path(), "ComputerB", &["ComputerA"], &[]);
    let r = &acq.records[0];
    assert_eq!(r.verification.status, VerificationStatus::Partial);
    assert_eq!(r.verification.missing_pieces, BTreeSet::from([0]));
    assert_eq!(r.custody.count(CustodyAction::HandshakeFailed), 1);
}

#[test]
fn partial_holder() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = simulate(PARTIAL, dir.path());
    let acq = acquire(&mut run, dir.path(), "Target", &["Source", "Holder"], &[]);
    let r = &acq.records[0];
    assert_eq!(r.target.reason, TargetReason::Invalidated);
    assert_eq!(r.verification.status, VerificationStatus::Partial);
    assert_eq!(r.verification.missing_pieces, BTreeSet::from([1]));
    assert_eq!(r.verification.verified_pieces, BTreeSet::from([0, 2]));
}

#[test]
fn byzantine_piece_is_refetched() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = simulate(BYZANTINE, dir.path());
    let acq = acquire(&mut run, dir.path(), "Target", &["Liar", "Honest"], &[]);
    let r = &acq.records[0];
    assert_eq!(r.verification.status, VerificationStatus::FullMatch);
    let fails: Vec<usize> = r
        .custody
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.action == CustodyAction::VerifyFail)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(fails.len(), 1);
    assert_eq!(r.custody.entries[fails[0] + 1].action, CustodyAction::Refetch);
}

#[test]
fn discovery_methods_find_source() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = simulate(POC, dir.path());
    let all = [
        DiscoverySource::Multicast,
        DiscoverySource::Tracker,
        DiscoverySource::Dht,
        DiscoverySource::SyncLogHistory,
    ];
    let acq = acquire(&mut run, dir.path(), "ComputerB", &[], &all);
    let share = run.share_id("evidence").unwrap();
    let peers = &acq.enumerations[&share].peers;
    let a = addr_of(&run, "ComputerA");
    let rec = peers.iter().find(|p| p.addr == a).expect("ComputerA enumerated");
    assert!(rec.sources.contains(&DiscoverySource::SyncLogHistory));
    assert!(rec.sources.contains(&DiscoverySource::Multicast));
    assert!(!peers.iter().any(|p| p.addr == addr_of(&run, "ComputerB")));
    assert_eq!(acq.records[0].verification.status, VerificationStatus::FullMatch);
}

#[test]
fn nothing_to_contact() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = simulate(POC, dir.path());
    let bundle = EntryPointBundle::from_dir(&dir.path().join("ComputerB")).unwrap();
    let inv = Investigator::attach(&mut run.net, inv_addr(), "lab");
    let err = run_acquisition(&bundle, &mut run.net, &inv, &AcquisitionOptions::default()).unwrap_err();
    assert!(matches!(err, AcquisitionError::NothingToContact));
}
