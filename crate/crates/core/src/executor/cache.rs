//! Content-addressed store of node outputs:
//! `cache/<key>/{output/, provenance.json, logs/stdout, logs/stderr}`.
//!
//! Entries are staged in `cache/.staging`, sealed and renamed into place, so
//! a visible entry is always complete and never changes afterwards.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ResourceLimits;
use crate::digest::{self, Digest};
use crate::error::{Error, IoContext, Result};
use crate::registry::{ComponentKind, Node, NodeRef};

pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(pub Digest);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        self.0.as_str()
    }

    pub fn short(&self) -> &str {
        self.0.short()
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredecessorRecord {
    pub node: NodeRef,
    pub key: CacheKey,
    pub output_digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceUsage {
    pub backend: String,
    pub wall_ms: u64,
    pub exit_code: Option<i32>,
    pub limits: ResourceLimits,
}

/// Everything needed to trace an output back to what produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub key: CacheKey,
    pub output_digest: Digest,
    pub node: NodeRef,
    /// `None` for uploads.
    pub kind: Option<ComponentKind>,
    pub image_ref: Option<String>,
    pub image_digest: Option<String>,
    pub command: Option<String>,
    pub resolved_command: Option<String>,
    pub dataset_id: String,
    pub dataset_digest: Digest,
    pub predecessors: Vec<PredecessorRecord>,
    pub rerank_depth: Option<usize>,
    pub rerank_input_digest: Option<Digest>,
    pub started_at: String,
    pub finished_at: String,
    pub resources: ResourceUsage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub output_digest: Digest,
    pub output_path: PathBuf,
    pub provenance: Provenance,
    pub sealed: bool,
}

impl CacheEntry {
    /// Recomputes the output tree digest and compares it with the record.
    pub fn verify(&self) -> Result<()> {
        let found = Digest::of_tree(&self.output_path)?;
        if found != self.output_digest {
            return Err(Error::DigestMismatch {
                path: self.output_path.display().to_string(),
                expected: self.output_digest.to_string(),
                found: found.to_string(),
            });
        }
        Ok(())
    }
}

/// The constituents of a cache key. Equal inputs give equal keys; changing
/// any constituent changes the key.
pub fn cache_key(
    node: &Node,
    image_digest: Option<&str>,
    dataset_id: &str,
    dataset_digest: &Digest,
    predecessors: &[&CacheEntry],
    rerank_depth: Option<usize>,
) -> Result<CacheKey> {
    if let Some(p) = predecessors.iter().find(|p| !p.sealed) {
        return Err(Error::Pipeline(format!(
            "predecessor output {} of `{}` is not sealed",
            p.key.short(),
            node.node_ref()
        )));
    }
    let version = node.node_ref().version.to_string();
    let depth = rerank_depth.map(|d| d.to_string());
    let mut parts: Vec<(&str, &str)> = vec![("schema", "irexp-cache-v1")];
    match node {
        Node::Component(c) => {
            let image = image_digest.ok_or_else(|| Error::ImageUnavailable(c.image_ref.clone()))?;
            parts.extend([
                ("type", "component"),
                ("id", c.component_id.as_str()),
                ("version", version.as_str()),
                ("image", image),
                ("command", c.command.as_str()),
                ("kind", c.kind.as_str()),
            ]);
        }
        Node::Upload(u) => parts.extend([
            ("type", "upload"),
            ("id", u.upload_id.as_str()),
            ("version", version.as_str()),
            ("payload", u.payload_digest.as_str()),
        ]),
    }
    parts.extend([("dataset", dataset_id), ("dataset_digest", dataset_digest.as_str())]);
    for p in predecessors {
        parts.push(("predecessor_output", p.output_digest.as_str()));
    }
    if let Some(d) = &depth {
        parts.push(("rerank_depth", d.as_str()));
    }
    Ok(CacheKey(Digest::of_parts(parts)))
}

/// Exclusive per-key lock, released on drop.
#[derive(Debug)]
pub struct KeyLock {
    _file: File,
}

#[derive(Clone, Debug)]
pub struct CacheStore {
    root: PathBuf,
}

impl CacheStore {
    pub fn new(store_root: &Path) -> Self {
        CacheStore {
            root: store_root.join("cache"),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_dir(&self, key: &CacheKey) -> PathBuf {
        self.root.join(key.as_str())
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>> {
        let dir = self.entry_dir(key);
        if !dir.join(PROVENANCE_FILE).is_file() {
            return Ok(None);
        }
        load_entry(&dir).map(Some)
    }

    /// Blocks until no other thread or process holds `key`.
    pub fn lock(&self, key: &CacheKey) -> Result<KeyLock> {
        let dir = self.root.join(".locks");
        fs::create_dir_all(&dir).at(&dir)?;
        let path = dir.join(format!("{}.lock", key.as_str()));
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .at(&path)?;
        file.lock().at(&path)?;
        Ok(KeyLock { _file: file })
    }

    /// A fresh staging directory with `output/` and `logs/` inside.
    pub fn stage(&self) -> Result<tempfile::TempDir> {
        let dir = self.root.join(".staging");
        fs::create_dir_all(&dir).at(&dir)?;
        let staging = tempfile::Builder::new().prefix("node-").tempdir_in(&dir).at(&dir)?;
        for sub in ["output", "logs"] {
            let p = staging.path().join(sub);
            fs::create_dir(&p).at(&p)?;
        }
        Ok(staging)
    }

    /// Seals a staged entry and publishes it under its key.
    pub fn commit(&self, staging: tempfile::TempDir, provenance: Provenance) -> Result<CacheEntry> {
        let target = self.entry_dir(&provenance.key);
        let dir = seal_staged(staging, &provenance)?;
        if let Err(e) = fs::rename(&dir, &target) {
            let _ = make_writable(&dir).and_then(|_| fs::remove_dir_all(&dir).at(&dir));
            if !target.join(PROVENANCE_FILE).is_file() {
                return Err(Error::IoAt { path: target, source: e });
            }
        }
        load_entry(&target)
    }

    /// All entries, ordered by key.
    pub fn entries(&self) -> Result<Vec<CacheEntry>> {
        if !self.root.is_dir() {
            return Ok(Vec::new());
        }
        let mut dirs = Vec::new();
        for e in fs::read_dir(&self.root).at(&self.root)? {
            let e = e.at(&self.root)?;
            let name = e.file_name().to_string_lossy().into_owned();
            if !name.starts_with('.') && e.path().join(PROVENANCE_FILE).is_file() {
                dirs.push(e.path());
            }
        }
        dirs.sort();
        dirs.iter().map(|d| load_entry(d)).collect()
    }

    /// Keys of entries whose inputs include an output of `node`.
    pub fn consumers_of(&self, node: &NodeRef) -> Result<Vec<String>> {
        Ok(self
            .entries()?
            .into_iter()
            .filter(|e| e.provenance.predecessors.iter().any(|p| &p.node == node))
            .map(|e| format!("cache entry {} ({})", e.key.short(), e.provenance.node))
            .collect())
    }
}

/// Writes provenance, seals the tree and returns the staged directory
/// (detached from its guard).
pub(crate) fn seal_staged(staging: tempfile::TempDir, provenance: &Provenance) -> Result<PathBuf> {
    let path = staging.path().join(PROVENANCE_FILE);
    fs::write(&path, serde_json::to_vec_pretty(provenance)?).at(&path)?;
    digest::seal_tree(staging.path())?;
    Ok(staging.keep())
}

pub(crate) fn load_entry(dir: &Path) -> Result<CacheEntry> {
    let path = dir.join(PROVENANCE_FILE);
    let provenance: Provenance = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
    Ok(CacheEntry {
        key: provenance.key.clone(),
        output_digest: provenance.output_digest.clone(),
        output_path: dir.join("output"),
        provenance,
        sealed: true,
    })
}

fn make_writable(root: &Path) -> Result<()> {
    for entry in walkdir::WalkDir::new(root) {
        let entry = entry.map_err(std::io::Error::from).at(root)?;
        if entry.file_type().is_file() {
            let mut perms = fs::metadata(entry.path()).at(entry.path())?.permissions();
            #[allow(clippy::permissions_set_readonly_false)]
            perms.set_readonly(false);
            fs::set_permissions(entry.path(), perms).at(entry.path())?;
        }
    }
    Ok(())
}

/// Removes a sealed tree (scratch outputs).
pub(crate) fn remove_sealed(root: &Path) -> Result<()> {
    if root.exists() {
        make_writable(root)?;
        fs::remove_dir_all(root).at(root)?;
    }
    Ok(())
}
