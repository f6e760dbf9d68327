use std::fs;
use std::io;
use std::net::SocketAddrV4;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    format_sync_log, resolve_in_root, write_manifest, write_settings, write_sync_dat, write_sync_id, SyncDat,
};
use crate::bencode::DictBuilder;
use crate::identity::{PeerId, ShareId};

use super::network::{Network, NodeId, TraceEntry};
use super::node::NodeState;
use super::wire::MessageKind;

/// Size of a simulated process memory image.
pub const MEMORY_IMAGE_LEN: usize = 256 * 1024;

/// A message as recorded by a network observation point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireSummary {
    pub t_ms: u64,
    pub from: SocketAddrV4,
    pub to: SocketAddrV4,
    pub kind: MessageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share: Option<ShareId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_id: Option<PeerId>,
    pub len: usize,
}

impl From<&TraceEntry> for WireSummary {
    fn from(t: &TraceEntry) -> Self {
        WireSummary {
            t_ms: t.t_ms,
            from: t.from,
            to: t.to,
            kind: t.kind,
            share: t.share,
            peer_id: t.peer_id,
            len: t.len,
        }
    }
}

/// Traffic captured at one host: every delivered datagram it sent or
/// received.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetLog {
    pub local: SocketAddrV4,
    pub messages: Vec<WireSummary>,
}

impl NetLog {
    pub fn capture(net: &Network, local: SocketAddrV4) -> NetLog {
        NetLog {
            local,
            messages: net
                .trace()
                .iter()
                .filter(|t| t.delivered && (t.from == local || t.to == local))
                .map(WireSummary::from)
                .collect(),
        }
    }
}

/// Seeded noise with the client's in-memory share records planted in it:
/// one bencoded `{peer_id, port, secret}` dictionary per share.
pub fn memory_image(node: &NodeState, seed: u64) -> Vec<u8> {
    let mut id8 = [0u8; 8];
    id8.copy_from_slice(&node.peer_id.as_bytes()[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(id8));
    let mut img = vec![0u8; MEMORY_IMAGE_LEN];
    rng.fill_bytes(&mut img);
    let slot = MEMORY_IMAGE_LEN / (node.shares.len() + 1);
    for (i, st) in node.shares.values().enumerate() {
        let record = DictBuilder::new()
            .insert("peer_id", node.peer_id.as_bytes().to_vec())
            .insert("port", i64::from(node.addr.port()))
            .insert("secret", st.secret.to_text().as_str())
            .build()
            .encode();
        let span = slot.saturating_sub(record.len()).max(1);
        let at = slot * i + rng.gen_range(0..span);
        img[at..at + record.len()].copy_from_slice(&record);
    }
    img
}

fn write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)
}

/// Writes `<dir>/disk/...` (the node's artifact tree in its OS layout),
/// `<dir>/memory.bin` and `<dir>/netlog.json`.
pub fn write_node_tree(net: &Network, id: NodeId, dir: &Path, seed: u64) -> io::Result<()> {
    let node = net.node(id);
    let disk = dir.join("disk");
    let app = disk.join(node.os.app_dir(&node.user));
    fs::create_dir_all(&app)?;
    write(&app.join("settings.dat"), &write_settings(&node.settings))?;
    let dat = SyncDat {
        folders: node.shares.values().map(|s| s.config.clone()).collect(),
        extra: Default::default(),
    };
    write(&app.join("sync.dat"), &write_sync_dat(&dat))?;
    write(&app.join("sync.log"), format_sync_log(&node.log).as_bytes())?;
    for (share, st) in &node.shares {
        write(&app.join(format!("{share}.db")), &write_manifest(&st.manifest))?;
        let folder = resolve_in_root(&disk, &st.config.path);
        write(&folder.join(".SyncID"), &write_sync_id(share))?;
        for (path, stored) in &st.content {
            if stored.held.is_none() {
                write(&resolve_in_root(&folder, path), &stored.bytes)?;
            }
        }
        for (path, archived) in &st.archive {
            write(&resolve_in_root(&folder.join(".SyncArchive"), path), &archived.bytes)?;
        }
    }
    write(&dir.join("memory.bin"), &memory_image(node, seed))?;
    let log = NetLog::capture(net, node.addr);
    let json = serde_json::to_vec_pretty(&log).map_err(io::Error::other)?;
    write(&dir.join("netlog.json"), &json)
}
