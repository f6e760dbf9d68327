use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::identity::ShareId;

use super::{ArtifactError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OsProfile {
    Windows,
    #[serde(alias = "mac")]
    MacOs,
    #[default]
    Linux,
    Ios,
}

impl OsProfile {
    /// Trailing path components of the client's application directory.
    fn app_dir_suffix(self) -> &'static [&'static str] {
        match self {
            OsProfile::Windows => &["AppData", "Roaming", "BitTorrent Sync"],
            OsProfile::MacOs => &["Library", "Application Support", "BitTorrent Sync"],
            OsProfile::Linux => &[".sync"],
            OsProfile::Ios => &["com.bittorent.BitTorrentSync", "Documents", "BitTorrent Sync"],
        }
    }

    /// Application directory for `user`, relative to the image root.
    pub fn app_dir(self, user: &str) -> PathBuf {
        let mut p = PathBuf::new();
        match self {
            OsProfile::Windows | OsProfile::MacOs => {
                p.push("Users");
                p.push(user);
            }
            OsProfile::Linux => {
                p.push("home");
                p.push(user);
                p.push("btsync");
            }
            OsProfile::Ios => p.push("Applications"),
        }
        p.extend(self.app_dir_suffix());
        p
    }

    /// Default location of a share folder, as the client records it in
    /// `sync.dat` (rooted, '/'-separated).
    pub fn default_share_path(self, user: &str, name: &str) -> String {
        match self {
            OsProfile::Windows | OsProfile::MacOs => format!("/Users/{user}/Documents/{name}"),
            OsProfile::Linux => format!("/home/{user}/Sync/{name}"),
            OsProfile::Ios => format!(
                "/Applications/com.bittorent.BitTorrentSync/Documents/BitTorrent Sync/Storage/{name}"
            ),
        }
    }
}

impl FromStr for OsProfile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "windows" => Ok(OsProfile::Windows),
            "macos" | "mac" => Ok(OsProfile::MacOs),
            "linux" => Ok(OsProfile::Linux),
            "ios" => Ok(OsProfile::Ios),
            other => Err(format!("unknown OS profile {other:?}")),
        }
    }
}

impl fmt::Display for OsProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OsProfile::Windows => "windows",
            OsProfile::MacOs => "macos",
            OsProfile::Linux => "linux",
            OsProfile::Ios => "ios",
        })
    }
}

/// Maps a path as recorded in `sync.dat` onto the image mounted at `root`.
pub fn resolve_in_root(root: &Path, recorded: &str) -> PathBuf {
    let mut p = root.to_path_buf();
    p.extend(recorded.split(['/', '\\']).filter(|c| !c.is_empty()));
    p
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareFolder {
    pub folder: PathBuf,
    pub sync_id: PathBuf,
}

/// Where a client's artifacts were found. Absent artifacts are `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactSet {
    pub root: PathBuf,
    pub profile: OsProfile,
    pub app_dir: Option<PathBuf>,
    pub sync_dat: Option<PathBuf>,
    pub settings_dat: Option<PathBuf>,
    pub sync_log: Option<PathBuf>,
    /// `<ShareID>.db` files keyed by the ShareID in their filename.
    pub manifests: Vec<(ShareId, PathBuf)>,
    pub share_folders: Vec<ShareFolder>,
    /// Directory walks and metadata lookups performed, in order. No file
    /// contents are read while locating.
    pub access_log: Vec<String>,
}

impl ArtifactSet {
    pub fn is_empty(&self) -> bool {
        self.sync_dat.is_none()
            && self.settings_dat.is_none()
            && self.sync_log.is_none()
            && self.manifests.is_empty()
            && self.share_folders.is_empty()
    }
}

fn ends_with(path: &Path, suffix: &[&str]) -> bool {
    let comps: Vec<_> = path.components().map(|c| c.as_os_str()).collect();
    comps.len() >= suffix.len()
        && comps[comps.len() - suffix.len()..]
            .iter()
            .zip(suffix)
            .all(|(a, b)| a.to_str() == Some(b))
}

fn manifest_stem(name: &str) -> Option<ShareId> {
    let stem = name.strip_suffix(".db")?;
    (stem.len() == 40).then(|| stem.parse().ok()).flatten()
}

pub fn locate_artifacts(root: &Path, profile: OsProfile) -> Result<ArtifactSet> {
    if !root.is_dir() {
        return Err(ArtifactError::RootNotFound(root.to_path_buf()));
    }
    let mut set = ArtifactSet {
        root: root.to_path_buf(),
        profile,
        app_dir: None,
        sync_dat: None,
        settings_dat: None,
        sync_log: None,
        manifests: Vec::new(),
        share_folders: Vec::new(),
        access_log: vec![format!("walk {}", root.display())],
    };
    let suffix = profile.app_dir_suffix();
    let walker = WalkDir::new(root)
        .follow_links(false)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok());
    for entry in walker {
        let path = entry.path();
        if entry.file_type().is_dir() {
            if set.app_dir.is_none() && ends_with(path, suffix) {
                set.access_log.push(format!("app dir {}", path.display()));
                set.app_dir = Some(path.to_path_buf());
            }
        } else if entry.file_type().is_file() && entry.file_name() == ".SyncID" {
            set.access_log.push(format!("stat {}", path.display()));
            set.share_folders.push(ShareFolder {
                folder: path.parent().unwrap_or(root).to_path_buf(),
                sync_id: path.to_path_buf(),
            });
        }
    }
    if let Some(app) = set.app_dir.clone() {
        for (name, slot) in [
            ("sync.dat", &mut set.sync_dat),
            ("settings.dat", &mut set.settings_dat),
            ("sync.log", &mut set.sync_log),
        ] {
            let p = app.join(name);
            if p.is_file() {
                set.access_log.push(format!("stat {}", p.display()));
                *slot = Some(p);
            }
        }
        let mut dbs: Vec<(ShareId, PathBuf)> = std::fs::read_dir(&app)
            .map_err(|source| ArtifactError::Io {
                path: app.clone(),
                source,
            })?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                manifest_stem(&name).map(|id| (id, e.path()))
            })
            .collect();
        dbs.sort();
        for (_, p) in &dbs {
            set.access_log.push(format!("stat {}", p.display()));
        }
        set.manifests = dbs;
    }
    Ok(set)
}
