use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use syncprobe_core::acquisition::{
    load_case, run_acquisition, AcquisitionError, AcquisitionOptions, CaseMetadata, EntryPointBundle, EvidenceReport,
    Investigator, ReportError,
};
use syncprobe_core::artifacts::{
    parse_manifest, parse_settings, parse_sync_dat, parse_sync_id, parse_sync_log, ArtifactError, Settings,
    ShareManifest, SyncDat, SyncLog,
};
use syncprobe_core::bencode::{self, Mode};
use syncprobe_core::digest::Hash20;
use syncprobe_core::identity::{Secret, ShareId};
use syncprobe_core::integrity::{index_file, verify_content, VerificationStatus};
use syncprobe_core::syncnet::{load_scenario, DiscoverySource, NetLog, ScenarioError, ScenarioSpec};

const DEFAULT_PORT: u16 = 3839;
const INVESTIGATOR_ADDR: &str = "192.0.2.1:3839";

#[derive(Parser)]
#[command(name = "syncprobe", version, about = "Forensic acquisition over simulated file-sync networks")]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (simulation tree or case directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write every node's artifact tree.
    Simulate { scenario: PathBuf },
    /// Parse and print a single artifact file.
    Inspect { artifact: PathBuf },
    /// Print the ShareID of a secret.
    Shareid { secret: String },
    /// Acquire and verify deleted files for one seized node.
    Acquire(AcquireArgs),
    /// Check a file against a manifest entry.
    Verify {
        file: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        path: String,
    },
    /// Re-verify a case directory and print its report.
    Report { case: PathBuf },
}

#[derive(clap::Args)]
struct AcquireArgs {
    /// A node directory written by `simulate`, or an artifact root.
    evidence: PathBuf,
    /// Memory image, if not `memory.bin` in the evidence directory.
    #[arg(long)]
    memory: Option<PathBuf>,
    /// Network capture, if not `netlog.json` in the evidence directory.
    #[arg(long)]
    netlog: Option<PathBuf>,
    /// Comma separated: multicast, tracker, dht, known_hosts, sync_log, all, none.
    #[arg(long)]
    methods: Option<String>,
    /// Approved peer (ip or ip:port). Restricts recovery to the listed peers.
    #[arg(long = "known-peer")]
    known_peers: Vec<String>,
    /// Extra secret supplied by the investigator.
    #[arg(long = "secret")]
    secrets: Vec<String>,
    /// Scenario that produced the evidence. Defaults to `../scenario.json`.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Scenario node the evidence came from. Defaults to the directory name.
    #[arg(long)]
    node: Option<String>,
    #[arg(long, default_value = INVESTIGATOR_ADDR)]
    investigator: SocketAddrV4,
    #[arg(long, default_value = "case-1")]
    case_id: String,
    #[arg(long)]
    examiner: Option<String>,
}

/// An error carrying the process exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    msg: String,
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Exit {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Exit { code: 2, msg: msg.into() }.into()
}

fn parse_err(msg: impl Into<String>) -> anyhow::Error {
    Exit { code: 1, msg: msg.into() }.into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Exit>().map_or(1, |x| x.code))
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.cmd {
        Cmd::Simulate { scenario } => simulate(cli, scenario),
        Cmd::Inspect { artifact } => inspect(cli, artifact),
        Cmd::Shareid { secret } => shareid(cli, secret),
        Cmd::Acquire(args) => acquire(cli, args),
        Cmd::Verify { file, manifest, path } => verify(cli, file, manifest, path),
        Cmd::Report { case } => report(cli, case),
    }
}

fn emit(cli: &Cli, value: &Value, text: impl FnOnce() -> String) {
    match cli.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(value).expect("JSON value")),
        Format::Text => print!("{}", text()),
    }
}

fn scenario_error(e: ScenarioError) -> anyhow::Error {
    match e {
        ScenarioError::Json(j) if j.is_syntax() || j.is_eof() => parse_err(format!("scenario JSON: {j}")),
        ScenarioError::Io { .. } => anyhow::Error::new(e),
        other => usage(format!("invalid scenario: {other}")),
    }
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<ScenarioSpec> {
    let mut spec = load_scenario(path).map_err(scenario_error)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn simulate(cli: &Cli, path: &Path) -> Result<u8> {
    let spec = load_spec(path, cli.seed)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut run = spec.build().map_err(scenario_error)?;
    let events = run.run();
    run.write_outputs(&out).with_context(|| format!("writing {}", out.display()))?;
    let digest = run.net.trace_digest();
    let nodes: Vec<&String> = run.nodes.keys().collect();
    emit(
        cli,
        &json!({
            "out": out,
            "seed": run.spec.seed,
            "events": events,
            "messages": run.net.trace().len(),
            "nodes": nodes,
            "trace_digest": digest.to_hex(),
        }),
        || {
            let mut s = format!("simulated {} event(s), {} message(s)\n", events, run.net.trace().len());
            for n in &nodes {
                s += &format!("  {}\n", out.join(n).display());
            }
            s + &format!("trace digest {digest}\n")
        },
    );
    Ok(0)
}

// inspect

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    SyncDat,
    Manifest,
    SyncId,
    SyncLog,
    Settings,
}

fn kind_by_name(path: &Path) -> Option<Kind> {
    let name = path.file_name()?.to_str()?;
    match name {
        "sync.dat" => Some(Kind::SyncDat),
        "settings.dat" => Some(Kind::Settings),
        ".SyncID" => Some(Kind::SyncId),
        "sync.log" => Some(Kind::SyncLog),
        _ if name.ends_with(".db") => Some(Kind::Manifest),
        _ => None,
    }
}

fn kind_by_content(bytes: &[u8]) -> Option<Kind> {
    if bytes.len() == 20 {
        return Some(Kind::SyncId);
    }
    if let Ok(v) = bencode::decode_with(bytes, Mode::Lenient) {
        let d = v.as_dict()?;
        let has = |k: &str| d.contains_key(k.as_bytes());
        return if has("folders") {
            Some(Kind::SyncDat)
        } else if has("share") && has("files") {
            Some(Kind::Manifest)
        } else if has("piece_len") || has("archive_days") {
            Some(Kind::Settings)
        } else {
            None
        };
    }
    let text = std::str::from_utf8(bytes).ok()?;
    let log = parse_sync_log(text);
    (!log.events.is_empty()).then_some(Kind::SyncLog)
}

fn artifact_err(path: &Path, e: ArtifactError) -> anyhow::Error {
    parse_err(format!("{}: {e}", path.display()))
}

fn inspect(cli: &Cli, path: &Path) -> Result<u8> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let kind = kind_by_name(path)
        .or_else(|| kind_by_content(&bytes))
        .ok_or_else(|| usage(format!("{}: unrecognised artifact kind", path.display())))?;
    match kind {
        Kind::SyncDat => {
            let dat = parse_sync_dat(&bytes).map_err(|e| artifact_err(path, e))?;
            let v = sync_dat_json(&dat);
            emit(cli, &v, || sync_dat_text(&dat));
        }
        Kind::Manifest => {
            let m = parse_manifest(&bytes).map_err(|e| artifact_err(path, e))?;
            emit(cli, &manifest_json(&m), || manifest_text(&m));
        }
        Kind::SyncId => {
            let id = parse_sync_id(&bytes).map_err(|e| artifact_err(path, e))?;
            emit(cli, &json!({"kind": "sync_id", "share_id": id}), || format!("{id}\n"));
        }
        Kind::SyncLog => {
            let text = std::str::from_utf8(&bytes).map_err(|e| parse_err(format!("{}: {e}", path.display())))?;
            let log = parse_sync_log(text);
            emit(cli, &log_json(&log), || log_text(&log));
        }
        Kind::Settings => {
            let s = parse_settings(&bytes).map_err(|e| artifact_err(path, e))?;
            emit(cli, &settings_json(&s), || {
                format!(
                    "sync_archive_enabled  {}\narchive_days          {}\npiece_len             {}\ncheckin_minutes       {}\n",
                    s.sync_archive_enabled, s.archive_days, s.piece_len, s.checkin_minutes
                )
            });
        }
    }
    Ok(0)
}

fn opt_share_id(secret: &Secret) -> Value {
    secret.share_id().map_or(Value::Null, |id| json!(id))
}

fn sync_dat_json(dat: &SyncDat) -> Value {
    let folders: Vec<Value> = dat
        .folders
        .iter()
        .map(|f| {
            json!({
                "path": f.path,
                "secret": f.secret,
                "access": f.secret.level().to_string(),
                "share_id": opt_share_id(&f.secret),
                "pub_key": f.pub_key.map(hex::encode_upper),
                "stopped_by_user": f.stopped_by_user,
                "use_dht": f.use_dht,
                "use_lan_broadcast": f.use_lan_broadcast,
                "use_relay": f.use_relay,
                "use_tracker": f.use_tracker,
                "use_known_hosts": f.use_known_hosts,
                "known_hosts": f.known_hosts,
                "peers": f.peers.iter().map(|p| json!({"id": p.id, "last_sync_completed": p.last_sync_completed})).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({"kind": "sync_dat", "folders": folders})
}

fn sync_dat_text(dat: &SyncDat) -> String {
    let mut s = String::new();
    for (i, f) in dat.folders.iter().enumerate() {
        let share = f.secret.share_id().map_or_else(|e| format!("({e})"), |id| id.to_string());
        let rows: Vec<(&str, String)> = vec![
            ("path", f.path.clone()),
            ("secret", format!("{} ({})", f.secret.to_text(), f.secret.level())),
            ("share_id (derived)", share),
            ("pub_key", f.pub_key.map(hex::encode_upper).unwrap_or_else(|| "-".into())),
            ("stopped_by_user", f.stopped_by_user.to_string()),
            ("use_dht", f.use_dht.to_string()),
            ("use_lan_broadcast", f.use_lan_broadcast.to_string()),
            ("use_relay", f.use_relay.to_string()),
            ("use_tracker", f.use_tracker.to_string()),
            ("use_known_hosts", f.use_known_hosts.to_string()),
            ("known_hosts", f.known_hosts.join(", ")),
        ];
        s += &format!("folder {i}\n");
        for (k, v) in rows {
            s += &format!("  {k:<20} {v}\n");
        }
        for p in &f.peers {
            s += &format!("  {:<20} {} last_sync_completed={}\n", "peer", p.id, p.last_sync_completed);
        }
    }
    if dat.folders.is_empty() {
        s += "no folders\n";
    }
    s
}

fn manifest_json(m: &ShareManifest) -> Value {
    let files: Vec<Value> = m
        .files
        .iter()
        .map(|f| {
            json!({
                "path": f.path, "size": f.size, "mtime": f.mtime, "state": f.state,
                "invalidated": f.invalidated, "hash20": f.hash20, "peer": f.peer,
            })
        })
        .collect();
    let meta: Vec<Value> = m
        .meta
        .iter()
        .map(|x| {
            json!({
                "path": x.path, "size": x.size, "piece_len": x.piece_len,
                "pieces": x.piece_hashes, "hash": x.aggregate_hash,
            })
        })
        .collect();
    json!({
        "kind": "manifest", "share_id": m.share_id, "peer_id": m.peer_id,
        "files": files, "meta": meta, "warnings": m.warnings(),
    })
}

fn manifest_text(m: &ShareManifest) -> String {
    let mut s = format!("share {}\n", m.share_id);
    if let Some(p) = m.peer_id {
        s += &format!("peer  {p}\n");
    }
    s += &format!("{:<32} {:>10} {:>5} {:>4} {}\n", "path", "size", "state", "inv", "hash20");
    for f in &m.files {
        s += &format!(
            "{:<32} {:>10} {:>5} {:>4} {}\n",
            f.path,
            f.size,
            f.state,
            u8::from(f.invalidated),
            f.hash20
        );
    }
    for w in m.warnings() {
        s += &format!("warning: {w}\n");
    }
    s
}

fn log_json(log: &SyncLog) -> Value {
    let events: Vec<Value> = log
        .events
        .iter()
        .map(|e| {
            json!({
                "timestamp": e.timestamp, "event": e.event, "share": e.share,
                "path": e.path, "peer_id": e.peer_id, "host": e.host,
            })
        })
        .collect();
    let warnings: Vec<Value> = log
        .warnings
        .iter()
        .map(|w| json!({"line": w.line, "reason": w.reason, "raw": w.raw}))
        .collect();
    json!({"kind": "sync_log", "events": events, "warnings": warnings})
}

fn log_text(log: &SyncLog) -> String {
    let mut s = String::new();
    for e in &log.events {
        s += &format!("{} {}", e.timestamp, e.event.as_str());
        if let Some(x) = &e.share {
            s += &format!(" share={x}");
        }
        if let Some(x) = &e.path {
            s += &format!(" path={x}");
        }
        if let Some(x) = &e.peer_id {
            s += &format!(" peer={x}");
        }
        if let Some(x) = &e.host {
            s += &format!(" host={x}");
        }
        s.push('\n');
    }
    for w in &log.warnings {
        s += &format!("warning: line {}: {}\n", w.line, w.reason);
    }
    s
}

fn settings_json(s: &Settings) -> Value {
    json!({
        "kind": "settings", "sync_archive_enabled": s.sync_archive_enabled,
        "archive_days": s.archive_days, "piece_len": s.piece_len, "checkin_minutes": s.checkin_minutes,
    })
}

fn shareid(cli: &Cli, text: &str) -> Result<u8> {
    let secret = Secret::from_text(text.trim()).map_err(|e| parse_err(format!("secret: {e}")))?;
    let id: ShareId = secret.share_id().map_err(|e| parse_err(format!("secret: {e}")))?;
    emit(cli, &json!({"access": secret.level().to_string(), "share_id": id}), || format!("{id}\n"));
    Ok(0)
}

// acquire

fn parse_methods(list: &str) -> Result<BTreeSet<DiscoverySource>> {
    let mut out = BTreeSet::new();
    for m in list.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        match m {
            "none" => {}
            "all" => out.extend(ALL_METHODS),
            "multicast" => {
                out.insert(DiscoverySource::Multicast);
            }
            "tracker" => {
                out.insert(DiscoverySource::Tracker);
            }
            "dht" => {
                out.insert(DiscoverySource::Dht);
            }
            "known_hosts" => {
                out.insert(DiscoverySource::KnownHosts);
            }
            "sync_log" | "sync_log_history" => {
                out.insert(DiscoverySource::SyncLogHistory);
            }
            other => return Err(usage(format!("--methods: unknown method {other:?}"))),
        }
    }
    Ok(out)
}

const ALL_METHODS: [DiscoverySource; 5] = [
    DiscoverySource::Multicast,
    DiscoverySource::Tracker,
    DiscoverySource::Dht,
    DiscoverySource::KnownHosts,
    DiscoverySource::SyncLogHistory,
];

fn parse_peer(s: &str) -> Result<SocketAddrV4> {
    s.parse::<SocketAddrV4>()
        .or_else(|_| s.parse::<Ipv4Addr>().map(|ip| SocketAddrV4::new(ip, DEFAULT_PORT)))
        .map_err(|_| usage(format!("--known-peer: {s:?} is not an IPv4 address")))
}

fn acquire(cli: &Cli, a: &AcquireArgs) -> Result<u8> {
    if !a.evidence.is_dir() {
        return Err(usage(format!("evidence directory {} does not exist", a.evidence.display())));
    }
    let known: BTreeSet<SocketAddrV4> = a.known_peers.iter().map(|p| parse_peer(p)).collect::<Result<_>>()?;
    let methods = match &a.methods {
        Some(m) => parse_methods(m)?,
        None if known.is_empty() => ALL_METHODS.into_iter().collect(),
        None => BTreeSet::new(),
    };
    if methods.is_empty() && known.is_empty() {
        return Err(usage("nothing to contact: give --methods or at least one --known-peer"));
    }
    let secrets: Vec<Secret> = a
        .secrets
        .iter()
        .map(|s| Secret::from_text(s.trim()).map_err(|e| usage(format!("--secret: {e}"))))
        .collect::<Result<_>>()?;

    let evidence = a.evidence.canonicalize()?;
    let parent = evidence.parent().unwrap_or(Path::new("."));
    let scenario_path = a.scenario.clone().unwrap_or_else(|| parent.join("scenario.json"));
    if !scenario_path.is_file() {
        return Err(usage(format!(
            "no scenario at {}; pass --scenario to name the network the evidence came from",
            scenario_path.display()
        )));
    }
    let spec = load_spec(&scenario_path, cli.seed)?;
    let node_name = match &a.node {
        Some(n) => n.clone(),
        None => evidence
            .file_name()
            .and_then(|n| n.to_str())
            .map(str::to_owned)
            .ok_or_else(|| usage("cannot infer the node name; pass --node"))?,
    };
    let mut run = spec.build().map_err(scenario_error)?;
    let node = run
        .node(&node_name)
        .ok_or_else(|| usage(format!("node {node_name:?} is not in the scenario; pass --node")))?;
    if run.net.node_at(a.investigator).is_some() {
        return Err(usage(format!("--investigator {} collides with a scenario node", a.investigator)));
    }
    run.run();
    if let Ok(stored) = fs::read_to_string(parent.join("trace.digest")) {
        let now = run.net.trace_digest().to_hex();
        if stored.trim() != now && a.scenario.is_none() && cli.seed.is_none() {
            eprintln!("warning: replayed network differs from the recorded trace digest");
        }
    }

    let mut bundle = EntryPointBundle::from_dir(&evidence).map_err(|e| match e {
        AcquisitionError::Artifact(e) => artifact_err(&evidence, e),
        other => anyhow::Error::new(other),
    })?;
    if let Some(p) = &a.memory {
        bundle.memory = Some(fs::read(p).with_context(|| format!("reading {}", p.display()))?);
    }
    if let Some(p) = &a.netlog {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let log: NetLog = serde_json::from_str(&text).map_err(|e| parse_err(format!("{}: {e}", p.display())))?;
        bundle.network_log = Some(log);
    }

    let lan = run.net.node(node).lan.clone();
    let inv = Investigator::attach(&mut run.net, a.investigator, &lan);
    let opts = AcquisitionOptions {
        methods,
        known_peers: known,
        secrets,
        case: CaseMetadata {
            case_id: a.case_id.clone(),
            examiner: a.examiner.clone(),
            evidence: node_name,
            seed: Some(run.spec.seed),
        },
    };
    let acq = run_acquisition(&bundle, &mut run.net, &inv, &opts).map_err(|e| match e {
        AcquisitionError::InsufficientSources => usage(e.to_string()),
        other => anyhow::Error::new(other),
    })?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("case"));
    acq.report
        .write_case(&acq.records, &out)
        .with_context(|| format!("writing case to {}", out.display()))?;
    print_report(cli, &acq.report);
    if cli.format == Format::Text {
        println!("case written to {}", out.display());
    }
    Ok(outcome(&acq.report))
}

fn outcome(r: &EvidenceReport) -> u8 {
    match r.worst_status() {
        None => 4,
        Some(VerificationStatus::FullMatch) => 0,
        Some(_) => 3,
    }
}

fn print_report(cli: &Cli, r: &EvidenceReport) {
    match cli.format {
        Format::Json => println!("{}", r.to_json()),
        Format::Text => print!("{}", r.narrative()),
    }
}

fn verify(cli: &Cli, file: &Path, manifest: &Path, path: &str) -> Result<u8> {
    let bytes = fs::read(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let m = parse_manifest(&bytes).map_err(|e| artifact_err(manifest, e))?;
    let entry = m.entry(path);
    let meta = m
        .meta(path)
        .ok_or_else(|| usage(format!("{path:?} has no piece metadata in {}", manifest.display())))?;
    let content = fs::read(file).with_context(|| format!("reading {}", file.display()))?;
    let index = index_file(&content, meta.piece_len)?;
    let result = verify_content(&content, meta);
    let expected: Option<Hash20> = entry.map(|e| e.hash20);
    let whole_ok = expected.is_none_or(|h| h == index.whole_file_hash);
    let aggregate_ok = index.aggregate_hash == meta.aggregate_hash;
    let ok = whole_ok && aggregate_ok && result.status == VerificationStatus::FullMatch;
    emit(
        cli,
        &json!({
            "path": path,
            "status": if ok { "MATCH" } else { "MISMATCH" },
            "sha1": index.whole_file_hash,
            "expected_sha1": expected,
            "aggregate": index.aggregate_hash,
            "expected_aggregate": meta.aggregate_hash,
            "verification": result,
        }),
        || {
            let mut s = format!("sha1       {} (manifest {})\n", index.whole_file_hash, expected.map_or("-".into(), |h| h.to_string()));
            s += &format!("aggregate  {} (manifest {})\n", index.aggregate_hash, meta.aggregate_hash);
            if !result.failed_pieces.is_empty() {
                s += &format!("failed pieces {:?}\n", result.failed_pieces);
            }
            s + if ok { "MATCH\n" } else { "MISMATCH\n" }
        },
    );
    Ok(if ok { 0 } else { 3 })
}

fn report(cli: &Cli, case: &Path) -> Result<u8> {
    match load_case(case) {
        Ok(r) => {
            print_report(cli, &r);
            Ok(outcome(&r))
        }
        Err(e @ (ReportError::ReverificationFailed { .. } | ReportError::DigestMismatch { .. })) => {
            eprintln!("error: {e}");
            Ok(3)
        }
        Err(e) => Err(parse_err(e.to_string())),
    }
}
