//! The sandbox contract: what a component sees while it runs.
//!
//! A [`SandboxSpec`] describes one container launch. Inputs are mounted
//! read-only, the output directory is the only writable location and the
//! network is disabled. [`Sandbox`] is the view a component implementation
//! gets of that environment; [`MockSandbox`] enforces that environment in-process and
//! [`HostSandbox`] forwards to the real filesystem and network (inside an OCI
//! container, where the runtime enforces the same contract).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, ErrorKind};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INPUT_MOUNT: &str = "/mnt/input";
pub const OUTPUT_MOUNT: &str = "/mnt/output";
pub const INPUT_RUN_MOUNT: &str = "/mnt/inputRun";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mount {
    pub host: PathBuf,
    pub container: String,
    pub writable: bool,
}

impl Mount {
    pub fn read_only(host: impl Into<PathBuf>, container: &str) -> Self {
        Mount {
            host: host.into(),
            container: container.to_string(),
            writable: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxSpec {
    /// Unique name of this launch.
    pub name: String,
    pub image_ref: String,
    pub command: String,
    pub env: BTreeMap<String, String>,
    pub mounts: Vec<Mount>,
    pub network: bool,
}

impl SandboxSpec {
    /// Network off and exactly one writable mount, at [`OUTPUT_MOUNT`].
    pub fn validate(&self) -> Result<()> {
        if self.network {
            return Err(Error::Invariant("sandbox network must be disabled".into()));
        }
        let writable: Vec<&Mount> = self.mounts.iter().filter(|m| m.writable).collect();
        if writable.len() != 1 || writable[0].container != OUTPUT_MOUNT {
            return Err(Error::Invariant(format!(
                "the only writable mount must be {OUTPUT_MOUNT}"
            )));
        }
        Ok(())
    }

    pub fn args(&self) -> Vec<String> {
        self.command.split_whitespace().map(str::to_string).collect()
    }
}

/// The environment visible to a running component.
pub trait Sandbox {
    /// Whitespace-separated words of the resolved command.
    fn args(&self) -> Vec<String>;
    fn env(&self, key: &str) -> Option<String>;
    fn read(&mut self, path: &str) -> io::Result<Vec<u8>>;
    /// Sorted entry names of a directory.
    fn read_dir(&mut self, path: &str) -> io::Result<Vec<String>>;
    /// Writes a file, creating parent directories.
    fn write(&mut self, path: &str, data: &[u8]) -> io::Result<()>;
    /// Opens an outbound TCP connection to `host:port`.
    fn connect(&mut self, address: &str) -> io::Result<()>;
    fn stdout(&mut self, text: &str);
    fn stderr(&mut self, text: &str);

    fn read_string(&mut self, path: &str) -> io::Result<String> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|e| io::Error::new(ErrorKind::InvalidData, e))
    }

    fn exists(&mut self, path: &str) -> bool {
        self.read(path).is_ok() || self.read_dir(path).is_ok()
    }
}

/// Lexically normalizes an absolute container path into its components.
fn components(path: &str) -> Option<Vec<&str>> {
    if !path.starts_with('/') {
        return None;
    }
    let mut out = Vec::new();
    for c in path.split('/') {
        match c {
            "" | "." => {}
            ".." => {
                out.pop();
            }
            c => out.push(c),
        }
    }
    Some(out)
}

/// Enforces a [`SandboxSpec`] in-process: every path is resolved against the
/// mount table, writes outside the writable mount and all network access are
/// refused and recorded as violations.
#[derive(Debug)]
pub struct MockSandbox<'a> {
    spec: &'a SandboxSpec,
    pub violations: Vec<String>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

impl<'a> MockSandbox<'a> {
    pub fn new(spec: &'a SandboxSpec) -> Self {
        MockSandbox {
            spec,
            violations: Vec::new(),
            stdout: Vec::new(),
            stderr: Vec::new(),
        }
    }

    /// Host path and writability of a container path; `None` when outside all
    /// mounts. The most specific mount wins.
    fn resolve(&self, path: &str) -> Option<(PathBuf, bool)> {
        let parts = components(path)?;
        self.spec
            .mounts
            .iter()
            .filter_map(|m| {
                let mount = components(&m.container)?;
                (parts.len() >= mount.len() && parts[..mount.len()] == mount[..]).then(|| {
                    let mut host = m.host.clone();
                    for p in &parts[mount.len()..] {
                        host.push(p);
                    }
                    (mount.len(), host, m.writable)
                })
            })
            .max_by_key(|(depth, _, _)| *depth)
            .map(|(_, host, writable)| (host, writable))
    }

    fn deny(&mut self, kind: ErrorKind, what: String) -> io::Error {
        self.violations.push(what.clone());
        io::Error::new(kind, what)
    }

    /// Mount points nested below `path` (e.g. `/mnt/inputRun/1`).
    fn child_mounts(&self, path: &str) -> Vec<String> {
        let Some(parts) = components(path) else { return Vec::new() };
        let mut names: Vec<String> = self
            .spec
            .mounts
            .iter()
            .filter_map(|m| {
                let mount = components(&m.container)?;
                (mount.len() == parts.len() + 1 && mount[..parts.len()] == parts[..]).then(|| mount[parts.len()].to_string())
            })
            .collect();
        names.sort();
        names
    }
}

impl Sandbox for MockSandbox<'_> {
    fn args(&self) -> Vec<String> {
        self.spec.args()
    }

    fn env(&self, key: &str) -> Option<String> {
        self.spec.env.get(key).cloned()
    }

    fn read(&mut self, path: &str) -> io::Result<Vec<u8>> {
        match self.resolve(path) {
            Some((host, _)) => fs::read(host),
            None => Err(self.deny(ErrorKind::NotFound, format!("read outside mounts: {path}"))),
        }
    }

    fn read_dir(&mut self, path: &str) -> io::Result<Vec<String>> {
        let nested = self.child_mounts(path);
        let listed = match self.resolve(path) {
            Some((host, _)) => match fs::read_dir(host) {
                Ok(entries) => entries
                    .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
                    .collect::<io::Result<Vec<_>>>()?,
                Err(e) if nested.is_empty() => return Err(e),
                Err(_) => Vec::new(),
            },
            None if !nested.is_empty() => Vec::new(),
            None => return Err(self.deny(ErrorKind::NotFound, format!("read outside mounts: {path}"))),
        };
        let mut names = listed;
        names.extend(nested);
        names.sort();
        names.dedup();
        Ok(names)
    }

    fn write(&mut self, path: &str, data: &[u8]) -> io::Result<()> {
        match self.resolve(path) {
            Some((host, true)) => {
                if let Some(parent) = host.parent() {
                    fs::create_dir_all(parent)?;
                }
                fs::write(host, data)
            }
            Some((_, false)) => Err(self.deny(
                ErrorKind::PermissionDenied,
                format!("write to read-only mount: {path}"),
            )),
            None => Err(self.deny(
                ErrorKind::PermissionDenied,
                format!("write to read-only file system: {path}"),
            )),
        }
    }

    fn connect(&mut self, address: &str) -> io::Result<()> {
        Err(self.deny(
            ErrorKind::NetworkUnreachable,
            format!("network access denied: connect {address}"),
        ))
    }

    fn stdout(&mut self, text: &str) {
        self.stdout.extend_from_slice(text.as_bytes());
    }

    fn stderr(&mut self, text: &str) {
        self.stderr.extend_from_slice(text.as_bytes());
    }
}

/// The real process environment, for fixtures launched by a container
/// runtime (`irexp fixture <name> ...`).
#[derive(Debug)]
pub struct HostSandbox {
    args: Vec<String>,
}

impl HostSandbox {
    pub fn new(args: Vec<String>) -> Self {
        HostSandbox { args }
    }
}

impl Sandbox for HostSandbox {
    fn args(&self) -> Vec<String> {
        self.args.clone()
    }

    fn env(&self, key: &str) -> Option<String> {
        std::env::var(key).ok()
    }

    fn read(&mut self, path: &str) -> io::Result<Vec<u8>> {
        fs::read(path)
    }

    fn read_dir(&mut self, path: &str) -> io::Result<Vec<String>> {
        let mut names = fs::read_dir(path)?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<io::Result<Vec<_>>>()?;
        names.sort();
        Ok(names)
    }

    fn write(&mut self, path: &str, data: &[u8]) -> io::Result<()> {
        if let Some(parent) = Path::new(path).parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, data)
    }

    fn connect(&mut self, address: &str) -> io::Result<()> {
        let addr = address
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(ErrorKind::NotFound, format!("cannot resolve {address}")))?;
        TcpStream::connect_timeout(&addr, Duration::from_secs(3)).map(drop)
    }

    fn stdout(&mut self, text: &str) {
        print!("{text}");
    }

    fn stderr(&mut self, text: &str) {
        eprint!("{text}");
    }
}
