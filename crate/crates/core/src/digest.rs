//! SHA-256 digests over bytes, files and directory trees.

use std::fmt;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use walkdir::WalkDir;

use crate::error::{IoContext, Result};

/// Lowercase hex SHA-256 digest.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Digest(String);

impl Digest {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        Digest(hex::encode(Sha256::digest(bytes)))
    }

    pub fn of_file(path: &Path) -> Result<Self> {
        let mut file = fs::File::open(path).at(path)?;
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 64 * 1024];
        loop {
            let n = file.read(&mut buf).at(path)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        Ok(Digest(hex::encode(hasher.finalize())))
    }

    /// Digest of a directory tree: entries are visited in sorted path order and
    /// each contributes its relative path plus, for files, the content digest.
    /// Permissions and timestamps do not take part.
    pub fn of_tree(root: &Path) -> Result<Self> {
        let mut listing = String::new();
        for entry in WalkDir::new(root).min_depth(1).sort_by_file_name() {
            let entry = entry.map_err(io::Error::from).at(root)?;
            let rel = relative_unix_path(root, entry.path());
            let ft = entry.file_type();
            if ft.is_dir() {
                listing.push_str(&format!("D {rel}\n"));
            } else if ft.is_symlink() {
                let target = fs::read_link(entry.path()).at(entry.path())?;
                listing.push_str(&format!("L {rel} {}\n", target.display()));
            } else {
                let d = Digest::of_file(entry.path())?;
                listing.push_str(&format!("F {rel} {d}\n"));
            }
        }
        Ok(Digest::of_bytes(listing.as_bytes()))
    }

    /// Digest over an ordered list of labelled parts; used for composite keys.
    pub fn of_parts<'a>(parts: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut hasher = Sha256::new();
        for (label, value) in parts {
            // length-prefix both halves so no two part lists collide by concatenation
            hasher.update((label.len() as u64).to_le_bytes());
            hasher.update(label.as_bytes());
            hasher.update((value.len() as u64).to_le_bytes());
            hasher.update(value.as_bytes());
        }
        Digest(hex::encode(hasher.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..12.min(self.0.len())]
    }

    pub fn parse(text: &str) -> Option<Self> {
        let ok = text.len() == 64 && text.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase());
        ok.then(|| Digest(text.to_string()))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub(crate) fn relative_unix_path(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Marks every file below `root` read-only.
pub(crate) fn seal_tree(root: &Path) -> Result<()> {
    for entry in WalkDir::new(root) {
        let entry = entry.map_err(io::Error::from).at(root)?;
        if entry.file_type().is_file() {
            let mut perms = fs::metadata(entry.path()).at(entry.path())?.permissions();
            perms.set_readonly(true);
            fs::set_permissions(entry.path(), perms).at(entry.path())?;
        }
    }
    Ok(())
}

/// Recursively copies a directory tree (files and directories only).
pub(crate) fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).at(to)?;
    for entry in WalkDir::new(from).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(io::Error::from).at(from)?;
        let target = to.join(entry.path().strip_prefix(from).unwrap_or(entry.path()));
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target).at(&target)?;
        } else {
            fs::copy(entry.path(), &target).at(entry.path())?;
            let mut perms = fs::metadata(&target).at(&target)?.permissions();
            #[allow(clippy::permissions_set_readonly_false)]
            perms.set_readonly(false);
            fs::set_permissions(&target, perms).at(&target)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_sha256() {
        assert_eq!(
            Digest::of_bytes(b"abc").as_str(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn tree_digest_ignores_creation_order_and_sees_content() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        fs::create_dir(a.path().join("sub")).unwrap();
        fs::write(a.path().join("sub/x"), "1").unwrap();
        fs::write(a.path().join("y"), "2").unwrap();
        fs::write(b.path().join("y"), "2").unwrap();
        fs::create_dir(b.path().join("sub")).unwrap();
        fs::write(b.path().join("sub/x"), "1").unwrap();
        assert_eq!(Digest::of_tree(a.path()).unwrap(), Digest::of_tree(b.path()).unwrap());
        fs::write(b.path().join("sub/x"), "3").unwrap();
        assert_ne!(Digest::of_tree(a.path()).unwrap(), Digest::of_tree(b.path()).unwrap());
    }

    #[test]
    fn parts_are_unambiguous() {
        assert_ne!(Digest::of_parts([("a", "bc")]), Digest::of_parts([("ab", "c")]));
    }
}
