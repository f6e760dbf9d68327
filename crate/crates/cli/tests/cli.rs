use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_syncprobe"))
        .args(args)
        .output()
        .expect("spawn syncprobe")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(name: &str, out: &Path) {
    let o = run(&["simulate", scenario(name).to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn find(root: &Path, pred: &dyn Fn(&Path) -> bool) -> Option<PathBuf> {
    for e in fs::read_dir(root).ok()?.flatten() {
        let p = e.path();
        if p.is_dir() {
            if let Some(hit) = find(&p, pred) {
                return Some(hit);
            }
        } else if pred(&p) {
            return Some(p);
        }
    }
    None
}

fn named(root: &Path, name: &str) -> PathBuf {
    find(root, &|p| p.file_name().unwrap() == name).unwrap_or_else(|| panic!("{name} under {}", root.display()))
}

fn b_manifest(out: &Path) -> PathBuf {
    find(&out.join("ComputerB"), &|p| p.extension().is_some_and(|e| e == "db")).unwrap()
}

#[test]
fn shareid_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    simulate("poc.json", &out);
    let dat = named(&out.join("ComputerA"), "sync.dat");
    let o = run(&["--format", "json", "inspect", dat.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let master = v["folders"][0]["secret"].as_str().unwrap().to_string();
    let share = v["folders"][0]["share_id"].as_str().unwrap().to_string();
    assert_eq!(master.len(), 53);

    let o = run(&["shareid", &master]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), share);
    assert_eq!(share.len(), 40);

    let dat_b = named(&out.join("ComputerB"), "sync.dat");
    let v: Value = serde_json::from_str(&stdout(&run(&["--format", "json", "inspect", dat_b.to_str().unwrap()]))).unwrap();
    let ro = v["folders"][0]["secret"].as_str().unwrap();
    assert_ne!(ro, master);
    assert_eq!(stdout(&run(&["shareid", ro])).trim(), share);

    assert_eq!(code(&run(&["shareid", &master[..52]])), 1);
}

#[test]
fn simulate_is_deterministic_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate("poc.json", &a);
    simulate("poc.json", &b);
    let da = fs::read_to_string(a.join("trace.digest")).unwrap();
    assert_eq!(da, fs::read_to_string(b.join("trace.digest")).unwrap());

    let c = tmp.path().join("c");
    let o = run(&["--seed", "5", "simulate", scenario("poc.json").to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_ne!(da, fs::read_to_string(c.join("trace.digest")).unwrap());

    let mut spec: Value = serde_json::from_str(&fs::read_to_string(scenario("poc.json")).unwrap()).unwrap();
    spec["timeline"][0]["node"] = "ComputerZ".into();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, spec.to_string()).unwrap();
    let o = run(&["simulate", bad.to_str().unwrap(), "--out", tmp.path().join("d").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("timeline[0].node"), "{}", stderr(&o));

    fs::write(&bad, "{\"seed\": ").unwrap();
    assert_eq!(code(&run(&["simulate", bad.to_str().unwrap()])), 1);
}

#[test]
fn inspect_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    simulate("poc.json", &out);

    let sid = named(&out.join("ComputerB"), ".SyncID");
    let o = run(&["inspect", sid.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let hex = stdout(&o).trim().to_string();
    assert_eq!(hex.len(), 40);
    assert!(hex.chars().all(|c| c.is_ascii_hexdigit()));

    let dat = named(&out.join("ComputerB"), "sync.dat");
    let text = stdout(&run(&["inspect", dat.to_str().unwrap()]));
    for key in ["secret", "share_id (derived)", "use_dht", "use_lan_broadcast", "use_relay", "use_tracker", "known_hosts"] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }
    assert!(text.contains(&hex));

    let db = b_manifest(&out);
    let o = run(&["--format", "json", "inspect", db.to_str().unwrap()]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let three = v["files"].as_array().unwrap().iter().find(|f| f["path"] == "badfilethree.txt").unwrap();
    assert_eq!(three["invalidated"], true);

    for name in ["sync.log", "settings.dat"] {
        let p = named(&out.join("ComputerB"), name);
        assert_eq!(code(&run(&["inspect", p.to_str().unwrap()])), 0, "{name}");
    }

    let bytes = fs::read(&db).unwrap();
    let truncated = tmp.path().join("cut.db");
    fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let o = run(&["inspect", truncated.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("at byte"), "{}", stderr(&o));

    let junk = tmp.path().join("blob.bin");
    fs::write(&junk, [0xFFu8; 64]).unwrap();
    assert_eq!(code(&run(&["inspect", junk.to_str().unwrap()])), 2);

    let copy = tmp.path().join("unnamed");
    fs::copy(&db, &copy).unwrap();
    let o = run(&["--format", "json", "inspect", copy.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("\"manifest\""));
}

#[test]
fn verify_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    simulate("poc.json", &out);
    let db = b_manifest(&out);
    let file = named(&out.join("ComputerB"), "badfiletwo.txt");
    let args = |f: &Path, path: &str| -> Output {
        run(&["verify", f.to_str().unwrap(), "--manifest", db.to_str().unwrap(), "--path", path])
    };
    assert_eq!(code(&args(&file, "badfiletwo.txt")), 0);

    let mut bytes = fs::read(&file).unwrap();
    bytes[7] ^= 1;
    let flipped = tmp.path().join("flipped.txt");
    fs::write(&flipped, bytes).unwrap();
    let o = args(&flipped, "badfiletwo.txt");
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("MISMATCH"));

    assert_eq!(code(&args(&file, "nosuchfile.txt")), 2);
}

#[test]
fn acquire_outcomes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    simulate("poc.json", &out);
    let b = out.join("ComputerB");
    let b = b.to_str().unwrap();

    let case = tmp.path().join("case");
    let o = run(&["acquire", b, "--known-peer", "192.168.1.10", "--out", case.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("badfilethree.txt") && stdout(&o).contains("FULL_MATCH"));
    assert_eq!(code(&run(&["report", case.to_str().unwrap()])), 0);

    // tampering with recovered bytes is caught on reload
    let rec = named(&case.join("recovered"), "badfilethree.txt");
    let mut bytes = fs::read(&rec).unwrap();
    bytes[0] ^= 0x20;
    fs::write(&rec, bytes).unwrap();
    assert_eq!(code(&run(&["report", case.to_str().unwrap()])), 3);

    // all discovery methods, no known peers
    let all = tmp.path().join("all");
    let o = run(&["acquire", b, "--out", all.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = run(&["acquire", b, "--methods", "none"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["acquire", b, "--methods", "carrier_pigeon"])), 2);
    assert_eq!(code(&run(&["acquire", b, "--known-peer", "not-an-ip"])), 2);
    assert_eq!(code(&run(&["acquire", tmp.path().join("missing").to_str().unwrap(), "--known-peer", "1.2.3.4"])), 2);
}

#[test]
fn acquire_with_offline_source_is_degraded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    simulate("poc_offline.json", &out);
    let case = tmp.path().join("case");
    let o = run(&[
        "--format",
        "json",
        "acquire",
        out.join("ComputerB").to_str().unwrap(),
        "--known-peer",
        "192.168.1.10:3839",
        "--out",
        case.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["records"][0]["verification"]["status"], "PARTIAL");
    assert!(v["records"][0]["custody"]["entries"]
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e["action"] == "HANDSHAKE_FAILED"));
}

#[test]
fn acquire_without_targets_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    simulate("byzantine.json", &out);
    let o = run(&[
        "acquire",
        out.join("Honest").to_str().unwrap(),
        "--known-peer",
        "10.2.0.3",
        "--out",
        tmp.path().join("case").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}
