use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::artifacts::{
    parse_manifest, parse_settings, parse_sync_dat, parse_sync_id, parse_sync_log, resolve_in_root, ArtifactSet,
    OsProfile, Settings, ShareManifest, SyncDat, SyncDatConfig, SyncLog,
};
use crate::identity::ShareId;

/// An artifact that could not be read or parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactIssue {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEvidence {
    /// ShareID taken from the `<ShareID>.db` filename.
    pub file_share_id: ShareId,
    pub path: String,
    pub manifest: ShareManifest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyncIdEvidence {
    pub folder: String,
    pub share_id: ShareId,
}

/// One `sync.dat` folder entry tied to the other artifacts of its share.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareLink {
    pub config: SyncDatConfig,
    /// ShareID derived from the configured secret.
    pub share_id: ShareId,
    /// The share folder inside the image, relative to the image root.
    pub folder: String,
    pub folder_found: bool,
    /// ShareID read from the folder's `.SyncID`.
    pub sync_id: Option<ShareId>,
    /// Index into [`LocalEvidence::manifests`].
    pub manifest: Option<usize>,
    /// True when every stored ShareID equals the derived one.
    pub consistent: bool,
    pub issues: Vec<String>,
}

/// Everything parsed from one seized artifact tree. Paths are relative to
/// the image root.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEvidence {
    pub root: PathBuf,
    pub profile: OsProfile,
    pub settings: Option<Settings>,
    pub sync_dat: Option<SyncDat>,
    pub manifests: Vec<ManifestEvidence>,
    pub sync_ids: Vec<SyncIdEvidence>,
    pub log: Option<SyncLog>,
    pub shares: Vec<ShareLink>,
    pub issues: Vec<ArtifactIssue>,
}

impl LocalEvidence {
    pub fn relative(&self, path: &Path) -> String {
        relative(&self.root, path)
    }

    pub fn manifest_for(&self, share: &ShareId) -> Option<&ShareManifest> {
        self.manifests
            .iter()
            .find(|m| m.file_share_id == *share)
            .map(|m| &m.manifest)
    }

    pub fn share(&self, share: &ShareId) -> Option<&ShareLink> {
        self.shares.iter().find(|s| s.share_id == *share)
    }

    /// Absolute location of a share folder, when `sync.dat` names it.
    pub fn folder_path(&self, share: &ShareId) -> Option<PathBuf> {
        self.share(share).map(|s| resolve_in_root(&self.root, &s.config.path))
    }
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Parses every artifact located in `set` and links each configured share
/// to its folder, `.SyncID` and manifest. Parse failures are collected
/// per artifact.
pub fn analyze_disk(set: &ArtifactSet) -> LocalEvidence {
    let root = &set.root;
    let mut issues = Vec::new();
    let mut read = |path: &Path| match fs::read(path) {
        Ok(b) => Some(b),
        Err(e) => {
            issues.push(ArtifactIssue {
                path: relative(root, path),
                error: e.to_string(),
            });
            None
        }
    };
    let mut raw = Vec::new();
    let settings_bytes = set.settings_dat.as_deref().and_then(&mut read);
    let sync_dat_bytes = set.sync_dat.as_deref().and_then(&mut read);
    let log_bytes = set.sync_log.as_deref().and_then(&mut read);
    for (id, path) in &set.manifests {
        if let Some(b) = read(path) {
            raw.push((*id, path, b));
        }
    }
    let mut sync_id_raw = Vec::new();
    for f in &set.share_folders {
        if let Some(b) = read(&f.sync_id) {
            sync_id_raw.push((f, b));
        }
    }

    let mut fail = |path: &Path, e: &dyn std::fmt::Display| {
        issues.push(ArtifactIssue {
            path: relative(root, path),
            error: e.to_string(),
        })
    };
    let settings = settings_bytes.and_then(|b| {
        parse_settings(&b)
            .map_err(|e| fail(set.settings_dat.as_deref().unwrap(), &e))
            .ok()
    });
    let sync_dat = sync_dat_bytes.and_then(|b| {
        parse_sync_dat(&b)
            .map_err(|e| fail(set.sync_dat.as_deref().unwrap(), &e))
            .ok()
    });
    let log = log_bytes.map(|b| parse_sync_log(&String::from_utf8_lossy(&b)));
    let manifests: Vec<ManifestEvidence> = raw
        .into_iter()
        .filter_map(|(id, path, b)| match parse_manifest(&b) {
            Ok(manifest) => Some(ManifestEvidence {
                file_share_id: id,
                path: relative(root, path),
                manifest,
            }),
            Err(e) => {
                fail(path, &e);
                None
            }
        })
        .collect();
    let sync_ids: Vec<SyncIdEvidence> = sync_id_raw
        .into_iter()
        .filter_map(|(f, b)| match parse_sync_id(&b) {
            Ok(share_id) => Some(SyncIdEvidence {
                folder: relative(root, &f.folder),
                share_id,
            }),
            Err(e) => {
                fail(&f.sync_id, &e);
                None
            }
        })
        .collect();

    let mut shares = Vec::new();
    for config in sync_dat.iter().flat_map(|d| &d.folders) {
        let Ok(share_id) = config.secret.share_id() else {
            issues.push(ArtifactIssue {
                path: "sync.dat".into(),
                error: format!("folder {} has an unsupported secret", config.path),
            });
            continue;
        };
        let folder_abs = resolve_in_root(root, &config.path);
        let folder = relative(root, &folder_abs);
        let sync_id = sync_ids.iter().find(|s| s.folder == folder).map(|s| s.share_id);
        let manifest = manifests.iter().position(|m| m.file_share_id == share_id);
        let mut link_issues = Vec::new();
        if let Some(stored) = sync_id.filter(|s| *s != share_id) {
            link_issues.push(format!(".SyncID holds {stored}, secret derives {share_id}"));
        }
        if let Some(m) = manifest.map(|i| &manifests[i].manifest) {
            if m.share_id != share_id {
                link_issues.push(format!("manifest records {}, secret derives {share_id}", m.share_id));
            }
        }
        shares.push(ShareLink {
            config: config.clone(),
            share_id,
            folder,
            folder_found: folder_abs.is_dir(),
            sync_id,
            manifest,
            consistent: link_issues.is_empty(),
            issues: link_issues,
        });
    }

    LocalEvidence {
        root: root.clone(),
        profile: set.profile,
        settings,
        sync_dat,
        manifests,
        sync_ids,
        log,
        shares,
        issues,
    }
}
