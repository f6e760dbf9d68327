use crate::bencode::{self, BValue, DictBuilder};
use crate::identity::{PeerId, Secret};

use super::{
    as_dict, field, flag, flag_value, req_bytes, req_int, req_text, schema, unknown_keys,
    ArtifactError, Dict, Result,
};

const SHARE_KEYS: &[&str] = &[
    "path",
    "secret",
    "pub_key",
    "stopped_by_user",
    "use_dht",
    "use_lan_broadcast",
    "use_relay",
    "use_tracker",
    "use_known_hosts",
    "known_hosts",
    "peers",
];

/// A peer recorded against a share in `sync.dat`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnownPeer {
    pub id: PeerId,
    /// Epoch seconds.
    pub last_sync_completed: i64,
    pub extra: Dict,
}

/// One share block of `sync.dat`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncDatConfig {
    pub path: String,
    pub secret: Secret,
    pub pub_key: Option<[u8; 32]>,
    pub stopped_by_user: bool,
    pub use_dht: bool,
    pub use_lan_broadcast: bool,
    pub use_relay: bool,
    pub use_tracker: bool,
    pub use_known_hosts: bool,
    pub known_hosts: Vec<String>,
    pub peers: Vec<KnownPeer>,
    pub extra: Dict,
}

impl SyncDatConfig {
    /// A share with the client's stock discovery settings.
    pub fn new(path: impl Into<String>, secret: Secret) -> SyncDatConfig {
        SyncDatConfig {
            path: path.into(),
            secret,
            pub_key: None,
            stopped_by_user: false,
            use_dht: false,
            use_lan_broadcast: true,
            use_relay: true,
            use_tracker: true,
            use_known_hosts: true,
            known_hosts: Vec::new(),
            peers: Vec::new(),
            extra: Dict::new(),
        }
    }

    pub fn from_bencode(v: &BValue) -> Result<SyncDatConfig> {
        let d = as_dict(v, "share entry")?;
        let ctx = "sync.dat share";
        let path = req_text(d, "path", ctx)?;
        let secret_text = req_text(d, "secret", ctx)?;
        let secret = Secret::from_text(&secret_text)
            .map_err(|e| schema(format!("{ctx} {path:?}: bad `secret`: {e}")))?;
        let pub_key = match field(d, "pub_key") {
            None => None,
            Some(_) => {
                let b = req_bytes(d, "pub_key", ctx)?;
                Some(<[u8; 32]>::try_from(b).map_err(|_| ArtifactError::BadLength {
                    expected: 32,
                    actual: b.len(),
                })?)
            }
        };
        let known_hosts = match field(d, "known_hosts") {
            None => Vec::new(),
            Some(v) => v
                .as_list()
                .ok_or_else(|| schema(format!("{ctx}: `known_hosts` must be a list")))?
                .iter()
                .map(|h| {
                    h.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| schema(format!("{ctx}: known host entries must be text")))
                })
                .collect::<Result<_>>()?,
        };
        let peers = match field(d, "peers") {
            None => Vec::new(),
            Some(v) => v
                .as_list()
                .ok_or_else(|| schema(format!("{ctx}: `peers` must be a list")))?
                .iter()
                .map(parse_peer)
                .collect::<Result<_>>()?,
        };
        let defaults = SyncDatConfig::new(String::new(), secret.clone());
        Ok(SyncDatConfig {
            path,
            secret,
            pub_key,
            stopped_by_user: flag(d, "stopped_by_user", ctx)?.unwrap_or(defaults.stopped_by_user),
            use_dht: flag(d, "use_dht", ctx)?.unwrap_or(defaults.use_dht),
            use_lan_broadcast: flag(d, "use_lan_broadcast", ctx)?
                .unwrap_or(defaults.use_lan_broadcast),
            use_relay: flag(d, "use_relay", ctx)?.unwrap_or(defaults.use_relay),
            use_tracker: flag(d, "use_tracker", ctx)?.unwrap_or(defaults.use_tracker),
            use_known_hosts: flag(d, "use_known_hosts", ctx)?.unwrap_or(defaults.use_known_hosts),
            known_hosts,
            peers,
            extra: unknown_keys(d, SHARE_KEYS),
        })
    }

    pub fn to_bencode(&self) -> BValue {
        let mut d = self.extra.clone();
        let b = DictBuilder::new()
            .insert("path", self.path.as_str())
            .insert("secret", self.secret.to_text().as_str())
            .insert_opt("pub_key", self.pub_key.map(|k| k.to_vec()))
            .insert("stopped_by_user", flag_value(self.stopped_by_user))
            .insert("use_dht", flag_value(self.use_dht))
            .insert("use_lan_broadcast", flag_value(self.use_lan_broadcast))
            .insert("use_relay", flag_value(self.use_relay))
            .insert("use_tracker", flag_value(self.use_tracker))
            .insert("use_known_hosts", flag_value(self.use_known_hosts))
            .insert(
                "known_hosts",
                self.known_hosts
                    .iter()
                    .map(|h| BValue::str(h))
                    .collect::<Vec<_>>(),
            )
            .insert(
                "peers",
                self.peers
                    .iter()
                    .map(|p| {
                        let mut pd = p.extra.clone();
                        pd.insert(b"id".to_vec(), BValue::bytes(p.id.0.to_vec()));
                        pd.insert(
                            b"last_sync_completed".to_vec(),
                            BValue::Int(p.last_sync_completed),
                        );
                        BValue::Dict(pd)
                    })
                    .collect::<Vec<_>>(),
            )
            .build();
        if let BValue::Dict(known) = b {
            d.extend(known);
        }
        BValue::Dict(d)
    }

    /// Records a completed sync with `peer`, replacing any older entry.
    pub fn record_peer(&mut self, peer: PeerId, epoch_secs: i64) {
        match self.peers.iter_mut().find(|p| p.id == peer) {
            Some(p) => p.last_sync_completed = p.last_sync_completed.max(epoch_secs),
            None => self.peers.push(KnownPeer {
                id: peer,
                last_sync_completed: epoch_secs,
                extra: Dict::new(),
            }),
        }
    }
}

fn parse_peer(v: &BValue) -> Result<KnownPeer> {
    let d = as_dict(v, "peer entry")?;
    let ctx = "sync.dat peer";
    let id_bytes = req_bytes(d, "id", ctx)?;
    let id = PeerId::from_slice(id_bytes).ok_or(ArtifactError::BadLength {
        expected: 20,
        actual: id_bytes.len(),
    })?;
    let last_sync_completed = req_int(d, "last_sync_completed", ctx)?;
    Ok(KnownPeer {
        id,
        last_sync_completed,
        extra: unknown_keys(d, &["id", "last_sync_completed"]),
    })
}

/// The whole `sync.dat` file: one block per share plus any other top-level
/// keys the client stored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SyncDat {
    pub folders: Vec<SyncDatConfig>,
    pub extra: Dict,
}

pub fn parse_sync_dat(bytes: &[u8]) -> Result<SyncDat> {
    let v = bencode::decode(bytes)?;
    let d = as_dict(&v, "sync.dat")?;
    let folders = match field(d, "folders") {
        None => Vec::new(),
        Some(f) => f
            .as_list()
            .ok_or_else(|| schema("sync.dat: `folders` must be a list"))?
            .iter()
            .map(SyncDatConfig::from_bencode)
            .collect::<Result<_>>()?,
    };
    Ok(SyncDat {
        folders,
        extra: unknown_keys(d, &["folders"]),
    })
}

pub fn write_sync_dat(dat: &SyncDat) -> Vec<u8> {
    let mut d = dat.extra.clone();
    d.insert(
        b"folders".to_vec(),
        BValue::List(dat.folders.iter().map(SyncDatConfig::to_bencode).collect()),
    );
    bencode::encode(&BValue::Dict(d))
}
