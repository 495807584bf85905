//! Immutable, versioned software components and uploads.
//!
//! Every change is an event appended to `registry/components.log` (one JSON
//! object per line); the in-memory state is a replay of that log. Writers take
//! an exclusive lock on `registry/.lock` and re-read the log before
//! validating, so concurrent processes never interleave conflicting events.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::digest::{self, Digest};
use crate::error::{Error, IoContext, Result};
use crate::executor::template::CommandTemplate;
use crate::ids;

pub const LOG_FILE: &str = "components.log";

/// A specific version of a component or upload.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub id: String,
    pub version: u32,
}

impl NodeRef {
    pub fn new(id: &str, version: u32) -> Self {
        NodeRef {
            id: id.to_string(),
            version,
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.id, self.version)
    }
}

impl FromStr for NodeRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (id, v) = s
            .rsplit_once('@')
            .ok_or_else(|| Error::InvalidArgument(format!("expected `id@version`, got `{s}`")))?;
        let version = v
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad version in `{s}`")))?;
        Ok(NodeRef::new(id, version))
    }
}

/// How a predecessor is named when defining a component. `Latest` is pinned
/// to a concrete version at definition time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeSpec {
    Latest(String),
    Pinned(NodeRef),
}

impl FromStr for NodeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.contains('@') {
            s.parse().map(NodeSpec::Pinned)
        } else {
            Ok(NodeSpec::Latest(s.to_string()))
        }
    }
}

impl From<&str> for NodeSpec {
    fn from(s: &str) -> Self {
        s.parse().unwrap_or_else(|_| NodeSpec::Latest(s.to_string()))
    }
}

impl From<NodeRef> for NodeSpec {
    fn from(r: NodeRef) -> Self {
        NodeSpec::Pinned(r)
    }
}

impl fmt::Display for NodeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeSpec::Latest(id) => f.write_str(id),
            NodeSpec::Pinned(r) => r.fmt(f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    /// Corpus and topics in, run out.
    FullRank,
    /// Re-rank file in, run out.
    ReRank,
    /// Anything else, e.g. an index builder.
    Generic,
}

impl ComponentKind {
    pub fn produces_run(self) -> bool {
        matches!(self, ComponentKind::FullRank | ComponentKind::ReRank)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::FullRank => "full_rank",
            ComponentKind::ReRank => "re_rank",
            ComponentKind::Generic => "generic",
        }
    }
}

impl FromStr for ComponentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "full_rank" => Ok(ComponentKind::FullRank),
            "re_rank" | "rerank" => Ok(ComponentKind::ReRank),
            "generic" => Ok(ComponentKind::Generic),
            _ => Err(Error::InvalidArgument(format!("unknown component kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub component_id: String,
    pub version: u32,
    pub image_ref: String,
    pub command: String,
    pub predecessors: Vec<NodeRef>,
    pub kind: ComponentKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Upload {
    pub upload_id: String,
    pub version: u32,
    pub description: String,
    /// Payload files relative to the payload root, sorted.
    pub files: Vec<String>,
    pub payload_digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Component(Component),
    Upload(Upload),
}

impl Node {
    pub fn node_ref(&self) -> NodeRef {
        match self {
            Node::Component(c) => NodeRef::new(&c.component_id, c.version),
            Node::Upload(u) => NodeRef::new(&u.upload_id, u.version),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Node::Component(c) => &c.component_id,
            Node::Upload(u) => &u.upload_id,
        }
    }

    pub fn predecessors(&self) -> &[NodeRef] {
        match self {
            Node::Component(c) => &c.predecessors,
            Node::Upload(_) => &[],
        }
    }

    pub fn as_component(&self) -> Option<&Component> {
        match self {
            Node::Component(c) => Some(c),
            Node::Upload(_) => None,
        }
    }

    pub fn produces_run(&self) -> bool {
        self.as_component().is_some_and(|c| c.kind.produces_run())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent {
    Add { node: Node, at: String },
    Delete { node: NodeRef, at: String },
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Clone, Debug)]
struct Entry {
    node: Node,
    deleted: bool,
}

/// A node and whether it has been deleted, as listed by [`Registry::snapshot`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotNode {
    #[serde(flatten)]
    pub node: Node,
    pub deleted: bool,
}

/// A pipeline: the terminal node's transitive predecessors in topological
/// order (definition order breaks ties), terminal last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pipeline {
    pub terminal: NodeRef,
    pub nodes: Vec<Node>,
}

impl Pipeline {
    pub fn refs(&self) -> Vec<NodeRef> {
        self.nodes.iter().map(Node::node_ref).collect()
    }

    pub fn node(&self, r: &NodeRef) -> Option<&Node> {
        self.nodes.iter().find(|n| &n.node_ref() == r)
    }

    pub fn terminal_node(&self) -> &Node {
        self.nodes.last().expect("pipeline contains its terminal")
    }
}

#[derive(Debug)]
pub struct Registry {
    dir: PathBuf,
    entries: BTreeMap<String, Vec<Entry>>,
    order: Vec<NodeRef>,
}

impl Registry {
    /// Opens (without creating) the registry below `<store>/registry`.
    pub fn open(store_root: &Path) -> Result<Self> {
        let mut reg = Registry {
            dir: store_root.join("registry"),
            entries: BTreeMap::new(),
            order: Vec::new(),
        };
        reg.reload()?;
        Ok(reg)
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    pub fn uploads_dir(&self) -> PathBuf {
        self.dir.join("uploads")
    }

    pub fn payload_dir(&self, upload: &NodeRef) -> PathBuf {
        self.uploads_dir().join(&upload.id).join(upload.version.to_string())
    }

    fn reload(&mut self) -> Result<()> {
        self.entries.clear();
        self.order.clear();
        let path = self.log_path();
        if !path.is_file() {
            return Ok(());
        }
        let text = fs::read_to_string(&path).at(&path)?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let event: LogEvent = serde_json::from_str(line).map_err(|e| Error::Parse {
                source_name: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            self.apply(event);
        }
        Ok(())
    }

    fn apply(&mut self, event: LogEvent) {
        match event {
            LogEvent::Add { node, .. } => {
                self.order.push(node.node_ref());
                self.entries
                    .entry(node.id().to_string())
                    .or_default()
                    .push(Entry { node, deleted: false });
            }
            LogEvent::Delete { node, .. } => {
                if let Some(e) = self.entry_mut(&node) {
                    e.deleted = true;
                }
            }
        }
    }

    fn entry(&self, r: &NodeRef) -> Option<&Entry> {
        let versions = self.entries.get(&r.id)?;
        versions.get((r.version as usize).checked_sub(1)?)
    }

    fn entry_mut(&mut self, r: &NodeRef) -> Option<&mut Entry> {
        let versions = self.entries.get_mut(&r.id)?;
        versions.get_mut((r.version as usize).checked_sub(1)?)
    }

    /// Runs `f` under the writer lock against a freshly reloaded state and
    /// appends the events it returns.
    fn mutate<T>(&mut self, f: impl FnOnce(&Self) -> Result<(Vec<String>, T)>) -> Result<T> {
        fs::create_dir_all(&self.dir).at(&self.dir)?;
        let lock_path = self.dir.join(".lock");
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .at(&lock_path)?;
        lock.lock().at(&lock_path)?;
        self.reload()?;
        let (lines, value) = f(self)?;
        let path = self.log_path();
        let mut log = OpenOptions::new().create(true).append(true).open(&path).at(&path)?;
        for line in &lines {
            writeln!(log, "{line}").at(&path)?;
        }
        log.sync_all().at(&path)?;
        drop(log);
        self.reload()?;
        drop(lock);
        Ok(value)
    }

    fn next_version(&self, id: &str) -> u32 {
        self.entries.get(id).map_or(0, Vec::len) as u32 + 1
    }

    /// The node if it exists and has not been deleted.
    pub fn get(&self, r: &NodeRef) -> Result<&Node> {
        match self.entry(r) {
            Some(e) if !e.deleted => Ok(&e.node),
            _ => Err(Error::not_found("node", r.to_string())),
        }
    }

    /// Like [`Registry::get`] but also returns deleted nodes.
    pub fn get_any(&self, r: &NodeRef) -> Option<&Node> {
        self.entry(r).map(|e| &e.node)
    }

    /// Latest non-deleted version of `id`.
    pub fn latest(&self, id: &str) -> Result<&Node> {
        self.entries
            .get(id)
            .and_then(|vs| vs.iter().rev().find(|e| !e.deleted))
            .map(|e| &e.node)
            .ok_or_else(|| Error::not_found("node", id))
    }

    pub fn resolve(&self, spec: &NodeSpec) -> Result<&Node> {
        match spec {
            NodeSpec::Latest(id) => self.latest(id),
            NodeSpec::Pinned(r) => self.get(r),
        }
    }

    pub fn add_component(
        &mut self,
        id: &str,
        image_ref: &str,
        command: &str,
        predecessors: &[NodeSpec],
        kind: ComponentKind,
    ) -> Result<Component> {
        ids::check("component", id)?;
        if image_ref.trim().is_empty() || image_ref.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("invalid image reference `{image_ref}`")));
        }
        let template = CommandTemplate::parse(command)?;
        template.check_predecessors(predecessors.len())?;
        self.mutate(|reg| {
            if let Some(Entry { node: Node::Upload(_), .. }) = reg.entries.get(id).and_then(|v| v.first()) {
                return Err(Error::AlreadyExists { kind: "upload", id: id.into() });
            }
            let mut pinned = Vec::with_capacity(predecessors.len());
            for spec in predecessors {
                let spec_id = match spec {
                    NodeSpec::Latest(i) => i.as_str(),
                    NodeSpec::Pinned(r) => r.id.as_str(),
                };
                if spec_id == id {
                    return Err(Error::Pipeline(format!("cycle: `{id}` cannot precede itself")));
                }
                let node = reg
                    .resolve(spec)
                    .map_err(|_| Error::Pipeline(format!("missing predecessor `{spec}`")))?;
                pinned.push(node.node_ref());
            }
            if kind == ComponentKind::ReRank && !pinned.iter().any(|p| reg.get(p).is_ok_and(Node::produces_run)) {
                return Err(Error::Pipeline(format!(
                    "re-rank component `{id}` needs a retrieval predecessor producing a run"
                )));
            }
            let component = Component {
                component_id: id.to_string(),
                version: reg.next_version(id),
                image_ref: image_ref.to_string(),
                command: command.to_string(),
                predecessors: pinned,
                kind,
            };
            let line = serde_json::to_string(&LogEvent::Add {
                node: Node::Component(component.clone()),
                at: now(),
            })?;
            Ok((vec![line], component))
        })
    }

    /// Adds a new version of `id` with a different image and/or command; all
    /// earlier versions remain resolvable.
    pub fn revise_component(&mut self, id: &str, image_ref: Option<&str>, command: Option<&str>) -> Result<Component> {
        let current = match self.latest(id)? {
            Node::Component(c) => c.clone(),
            Node::Upload(_) => return Err(Error::InvalidArgument(format!("`{id}` is an upload, not a component"))),
        };
        let specs: Vec<NodeSpec> = current.predecessors.iter().cloned().map(NodeSpec::Pinned).collect();
        self.add_component(
            id,
            image_ref.unwrap_or(&current.image_ref),
            command.unwrap_or(&current.command),
            &specs,
            current.kind,
        )
    }

    /// Stores `files` (plain files or directories) as a new upload version.
    pub fn add_upload(&mut self, id: &str, files: &[PathBuf], description: &str) -> Result<Upload> {
        ids::check("upload", id)?;
        if files.is_empty() {
            return Err(Error::InvalidArgument("an upload needs at least one file".into()));
        }
        let staging_parent = self.uploads_dir();
        fs::create_dir_all(&staging_parent).at(&staging_parent)?;
        let staging = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(&staging_parent)
            .at(&staging_parent)?;
        for f in files {
            let name = f
                .file_name()
                .ok_or_else(|| Error::InvalidArgument(format!("bad upload path {}", f.display())))?;
            if f.is_dir() {
                digest::copy_tree(f, &staging.path().join(name))?;
            } else {
                fs::copy(f, staging.path().join(name)).at(f)?;
            }
        }
        let payload_digest = Digest::of_tree(staging.path())?;
        let mut listed = Vec::new();
        for entry in walkdir::WalkDir::new(staging.path()).min_depth(1).sort_by_file_name() {
            let entry = entry.map_err(std::io::Error::from).at(staging.path())?;
            if entry.file_type().is_file() {
                listed.push(digest::relative_unix_path(staging.path(), entry.path()));
            }
        }
        self.mutate(|reg| {
            if let Some(Entry { node: Node::Component(_), .. }) = reg.entries.get(id).and_then(|v| v.first()) {
                return Err(Error::AlreadyExists { kind: "component", id: id.into() });
            }
            let upload = Upload {
                upload_id: id.to_string(),
                version: reg.next_version(id),
                description: description.to_string(),
                files: listed,
                payload_digest,
            };
            let target = reg.payload_dir(&NodeRef::new(id, upload.version));
            fs::create_dir_all(target.parent().expect("nested")).at(&target)?;
            fs::rename(staging.keep(), &target).at(&target)?;
            digest::seal_tree(&target)?;
            let line = serde_json::to_string(&LogEvent::Add {
                node: Node::Upload(upload.clone()),
                at: now(),
            })?;
            Ok((vec![line], upload))
        })
    }

    /// Deletes a node unless a live node or one of `external_refs` (e.g.
    /// cache entries that consumed its output) still references it.
    pub fn delete_node(&mut self, r: &NodeRef, external_refs: &[String]) -> Result<()> {
        let external = external_refs.to_vec();
        self.mutate(|reg| {
            reg.get(r)?;
            let mut referenced_by: Vec<String> = reg
                .live_nodes()
                .filter(|n| n.predecessors().contains(r))
                .map(|n| n.node_ref().to_string())
                .collect();
            referenced_by.extend(external);
            if !referenced_by.is_empty() {
                return Err(Error::Referenced {
                    node: r.to_string(),
                    referenced_by,
                });
            }
            let line = serde_json::to_string(&LogEvent::Delete { node: r.clone(), at: now() })?;
            Ok((vec![line], ()))
        })
    }

    fn live_nodes(&self) -> impl Iterator<Item = &Node> {
        self.order.iter().filter_map(|r| self.get(r).ok())
    }

    /// All nodes ever defined, in definition order.
    pub fn snapshot(&self) -> Vec<SnapshotNode> {
        self.order
            .iter()
            .filter_map(|r| self.entry(r))
            .map(|e| SnapshotNode {
                node: e.node.clone(),
                deleted: e.deleted,
            })
            .collect()
    }

    /// Transitive predecessor closure of `terminal`, topologically sorted.
    pub fn resolve_pipeline(&self, terminal: &NodeRef) -> Result<Pipeline> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Visiting,
            Done,
        }
        fn visit(reg: &Registry, r: &NodeRef, marks: &mut HashMap<NodeRef, Mark>, out: &mut Vec<Node>) -> Result<()> {
            match marks.get(r) {
                Some(Mark::Done) => return Ok(()),
                Some(Mark::Visiting) => return Err(Error::Pipeline(format!("cycle through `{r}`"))),
                None => {}
            }
            marks.insert(r.clone(), Mark::Visiting);
            let node = reg.get(r)?;
            for p in node.predecessors() {
                visit(reg, p, marks, out)?;
            }
            marks.insert(r.clone(), Mark::Done);
            out.push(node.clone());
            Ok(())
        }
        let mut nodes = Vec::new();
        visit(self, terminal, &mut HashMap::new(), &mut nodes)?;
        Ok(Pipeline {
            terminal: terminal.clone(),
            nodes,
        })
    }

    /// Appends raw log lines exported from another store. Events already
    /// present (identical node at the same version) are skipped; conflicting
    /// ones are refused. Upload payloads are copied from `uploads_source`.
    pub fn import_log(&mut self, log_text: &str, uploads_source: &Path) -> Result<usize> {
        let mut events = Vec::new();
        for (i, line) in log_text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let event: LogEvent = serde_json::from_str(line).map_err(|e| Error::Parse {
                source_name: LOG_FILE.into(),
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push((line.to_string(), event));
        }
        let payload_root = self.uploads_dir();
        self.mutate(|reg| {
            let mut shadow: BTreeMap<String, Vec<(Node, bool)>> = reg
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|e| (e.node.clone(), e.deleted)).collect()))
                .collect();
            let mut lines = Vec::new();
            for (line, event) in events {
                match event {
                    LogEvent::Add { node, .. } => {
                        let r = node.node_ref();
                        let versions = shadow.entry(r.id.clone()).or_default();
                        match versions.get((r.version as usize).saturating_sub(1)) {
                            Some((existing, _)) if existing == &node => continue,
                            Some(_) => {
                                return Err(Error::AlreadyExists {
                                    kind: "conflicting node",
                                    id: r.to_string(),
                                })
                            }
                            None if versions.len() + 1 != r.version as usize => {
                                return Err(Error::Integrity(format!("version gap before `{r}` in imported log")))
                            }
                            None => {}
                        }
                        if let Node::Upload(u) = &node {
                            let src = uploads_source.join(&u.upload_id).join(u.version.to_string());
                            let found = Digest::of_tree(&src)?;
                            if found != u.payload_digest {
                                return Err(Error::DigestMismatch {
                                    path: src.display().to_string(),
                                    expected: u.payload_digest.to_string(),
                                    found: found.to_string(),
                                });
                            }
                            let dst = payload_root.join(&u.upload_id).join(u.version.to_string());
                            if !dst.exists() {
                                digest::copy_tree(&src, &dst)?;
                                digest::seal_tree(&dst)?;
                            }
                        }
                        versions.push((node, false));
                        lines.push(line);
                    }
                    LogEvent::Delete { node: r, .. } => {
                        let slot = shadow
                            .get_mut(&r.id)
                            .and_then(|v| v.get_mut((r.version as usize).saturating_sub(1)))
                            .ok_or_else(|| Error::Integrity(format!("imported log deletes unknown `{r}`")))?;
                        if !slot.1 {
                            slot.1 = true;
                            lines.push(line);
                        }
                    }
                }
            }
            let n = lines.len();
            Ok((lines, n))
        })
    }
}

/// Timestamp helper shared with provenance records.
pub(crate) fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> (tempfile::TempDir, Registry) {
        let dir = tempfile::tempdir().unwrap();
        let r = Registry::open(dir.path()).unwrap();
        (dir, r)
    }

    #[test]
    fn two_stage_sequence() {
        let (_d, mut r) = reg();
        let idx = r
            .add_component("index-corpus", "img:1", "index $inputDataset $outputDir", &[], ComponentKind::Generic)
            .unwrap();
        assert_eq!(idx.version, 1);
        let bm25 = r
            .add_component("bm25", "img:1", "bm25 $inputRun $outputDir", &["index-corpus".into()], ComponentKind::FullRank)
            .unwrap();
        assert_eq!(bm25.predecessors, vec![NodeRef::new("index-corpus", 1)]);
        let p = r.resolve_pipeline(&NodeRef::new("bm25", 1)).unwrap();
        assert_eq!(p.refs(), vec![NodeRef::new("index-corpus", 1), NodeRef::new("bm25", 1)]);
    }

    #[test]
    fn missing_predecessor() {
        let (_d, mut r) = reg();
        let err = r
            .add_component("x", "img", "run $inputRun", &["ghost".into()], ComponentKind::Generic)
            .unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn input_run_without_predecessors_is_refused() {
        let (_d, mut r) = reg();
        assert!(matches!(
            r.add_component("x", "img", "run $inputRun", &[], ComponentKind::Generic),
            Err(Error::Template(_))
        ));
        assert!(matches!(
            r.add_component("x", "img", "run $bogus", &[], ComponentKind::Generic),
            Err(Error::Template(_))
        ));
    }

    #[test]
    fn self_reference_is_a_cycle() {
        let (_d, mut r) = reg();
        r.add_component("a", "img", "x", &[], ComponentKind::Generic).unwrap();
        assert!(matches!(
            r.add_component("a", "img", "x", &["a".into()], ComponentKind::Generic),
            Err(Error::Pipeline(m)) if m.contains("cycle")
        ));
    }

    #[test]
    fn revise_keeps_old_versions() {
        let (_d, mut r) = reg();
        r.add_component("a", "img", "x --k 1", &[], ComponentKind::FullRank).unwrap();
        let v2 = r.revise_component("a", None, Some("x --k 2")).unwrap();
        assert_eq!(v2.version, 2);
        let v3 = r.revise_component("a", None, None).unwrap();
        assert_eq!(v3.version, 3, "identical content still yields a new version");
        let v1 = r.get(&NodeRef::new("a", 1)).unwrap().as_component().unwrap().clone();
        assert_eq!(v1.command, "x --k 1");
        assert!(matches!(r.revise_component("nope", None, None), Err(Error::NotFound { .. })));
    }

    #[test]
    fn delete_respects_references() {
        let (_d, mut r) = reg();
        r.add_component("index-corpus", "img", "x", &[], ComponentKind::Generic).unwrap();
        r.add_component("bm25", "img", "y $inputRun", &["index-corpus".into()], ComponentKind::FullRank)
            .unwrap();
        match r.delete_node(&NodeRef::new("index-corpus", 1), &[]).unwrap_err() {
            Error::Referenced { referenced_by, .. } => assert_eq!(referenced_by, vec!["bm25@1"]),
            other => panic!("{other:?}"),
        }
        assert!(r.delete_node(&NodeRef::new("bm25", 1), &["cache entry k".into()]).is_err());
        r.delete_node(&NodeRef::new("bm25", 1), &[]).unwrap();
        assert!(matches!(
            r.resolve_pipeline(&NodeRef::new("bm25", 1)),
            Err(Error::NotFound { .. })
        ));
        // now unreferenced
        r.delete_node(&NodeRef::new("index-corpus", 1), &[]).unwrap();
    }

    #[test]
    fn diamond_and_definition_order() {
        let (_d, mut r) = reg();
        r.add_component("root", "img", "x", &[], ComponentKind::Generic).unwrap();
        r.add_component("left", "img", "x $inputRun", &["root".into()], ComponentKind::FullRank).unwrap();
        r.add_component("right", "img", "x $inputRun", &["root".into()], ComponentKind::Generic).unwrap();
        r.add_component("join", "img", "x $inputRun", &["right".into(), "left".into()], ComponentKind::ReRank)
            .unwrap();
        let p = r.resolve_pipeline(&NodeRef::new("join", 1)).unwrap();
        let ids: Vec<String> = p.nodes.iter().map(|n| n.id().to_string()).collect();
        assert_eq!(ids, vec!["root", "right", "left", "join"]);
        assert_eq!(p, r.resolve_pipeline(&NodeRef::new("join", 1)).unwrap());
    }

    #[test]
    fn state_survives_reopen_and_is_immutable() {
        let dir = tempfile::tempdir().unwrap();
        let c = {
            let mut r = Registry::open(dir.path()).unwrap();
            r.add_component("a", "img:1", "x", &[], ComponentKind::FullRank).unwrap()
        };
        let mut r = Registry::open(dir.path()).unwrap();
        r.revise_component("a", Some("img:2"), None).unwrap();
        assert_eq!(r.get(&NodeRef::new("a", 1)).unwrap(), &Node::Component(c));
    }

    #[test]
    fn uploads_are_source_nodes() {
        let (d, mut r) = reg();
        let f = d.path().join("query-features.json");
        fs::write(&f, "{}").unwrap();
        let u = r.add_upload("features", &[f], "manual features").unwrap();
        assert_eq!(u.files, vec!["query-features.json"]);
        assert!(r.payload_dir(&NodeRef::new("features", 1)).join("query-features.json").is_file());
        r.add_component("bm25", "img", "x", &[], ComponentKind::FullRank).unwrap();
        let ltr = r
            .add_component("ltr", "img", "x $inputRun", &["bm25".into(), "features".into()], ComponentKind::ReRank)
            .unwrap();
        assert_eq!(ltr.predecessors, vec![NodeRef::new("bm25", 1), NodeRef::new("features", 1)]);
        assert!(r.add_component("features", "img", "x", &[], ComponentKind::Generic).is_err());
    }

    #[test]
    fn rerank_requires_retrieval_predecessor() {
        let (_d, mut r) = reg();
        r.add_component("idx", "img", "x", &[], ComponentKind::Generic).unwrap();
        assert!(r
            .add_component("rr", "img", "x $inputRun", &["idx".into()], ComponentKind::ReRank)
            .is_err());
    }
}
