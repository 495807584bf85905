//! Pipeline execution: sandboxed container launches with content-addressed
//! caching of every node output.

pub mod cache;
pub mod mock;
pub mod oci;
pub mod sandbox;
pub mod template;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::dataset_hub::{Dataset, DatasetHub, RerankOptions, DEFAULT_RERANK_DEPTH};
use crate::digest::{self, Digest};
use crate::error::{Error, IoContext, Result};
use crate::formats::{self, RunFile};
use crate::registry::{ComponentKind, Node, NodeRef, Pipeline};

pub use cache::{cache_key, CacheEntry, CacheKey, CacheStore, Provenance};
pub use mock::{MockBackend, MockImage};
pub use oci::OciBackend;
pub use sandbox::{Mount, Sandbox, SandboxSpec, INPUT_MOUNT, INPUT_RUN_MOUNT, OUTPUT_MOUNT};
use template::{resolve_command, CommandContext};

/// Name of the run file a retrieval component writes to `$outputDir`.
pub const RUN_FILE: &str = "run.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceLimits {
    pub cpus: f64,
    pub memory_bytes: u64,
    pub timeout: Duration,
}

impl Default for ResourceLimits {
    fn default() -> Self {
        ResourceLimits {
            cpus: 1.0,
            memory_bytes: 10 * 1024 * 1024 * 1024,
            timeout: Duration::from_secs(3600),
        }
    }
}

impl ResourceLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.cpus > 0.0 && self.cpus.is_finite()) || self.memory_bytes == 0 || self.timeout.is_zero() {
            return Err(Error::InvalidArgument("resource limits must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one container launch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContainerOutcome {
    pub exit_code: i32,
    pub timed_out: bool,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    /// Refused sandbox escapes observed by the backend.
    pub violations: Vec<String>,
    pub wall: Duration,
}

pub trait ContainerBackend: Send + Sync {
    fn name(&self) -> &'static str;

    /// Content digest of an image; `ImageUnavailable` if it cannot be resolved.
    fn image_digest(&self, image_ref: &str) -> Result<String>;

    fn run(&self, spec: &SandboxSpec, limits: &ResourceLimits) -> Result<ContainerOutcome>;

    /// Containers launched so far.
    fn launches(&self) -> usize;

    fn save_image(&self, image_ref: &str, _dest: &Path) -> Result<()> {
        Err(Error::InvalidArgument(format!(
            "the {} backend cannot export image `{image_ref}`",
            self.name()
        )))
    }

    fn load_image(&self, tarball: &Path) -> Result<()> {
        Err(Error::InvalidArgument(format!(
            "the {} backend cannot load {}",
            self.name(),
            tarball.display()
        )))
    }
}

#[derive(Clone, Debug)]
pub struct ExecutionRequest {
    pub pipeline: Pipeline,
    pub dataset_id: String,
    pub limits: ResourceLimits,
    /// Top-k of the previous stage handed to re-rank components.
    pub rerank_depth: usize,
    /// When false, every node is executed into a scratch directory and the
    /// cache is neither read nor written.
    pub use_cache: bool,
}

impl ExecutionRequest {
    pub fn new(pipeline: Pipeline, dataset_id: &str) -> Self {
        ExecutionRequest {
            pipeline,
            dataset_id: dataset_id.to_string(),
            limits: ResourceLimits::default(),
            rerank_depth: DEFAULT_RERANK_DEPTH,
            use_cache: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    CacheHit,
    Executed,
    Failed,
    /// Not attempted because a predecessor failed.
    Skipped,
}

impl NodeState {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeState::CacheHit => "cache hit",
            NodeState::Executed => "executed",
            NodeState::Failed => "failed",
            NodeState::Skipped => "skipped",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub node: NodeRef,
    pub state: NodeState,
    pub cache_key: Option<CacheKey>,
    pub output_digest: Option<Digest>,
    pub error: Option<String>,
    pub stderr: String,
    pub violations: Vec<String>,
    /// Whether a container was started for this node.
    pub launched: bool,
    /// Positions in the execution trace; a node starts strictly after all of
    /// its predecessors finished.
    pub started_seq: u64,
    pub finished_seq: u64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct ExecutionReport {
    pub dataset_id: String,
    pub terminal: NodeRef,
    /// In pipeline order.
    pub nodes: Vec<NodeStatus>,
    pub terminal_entry: Option<CacheEntry>,
    pub entries: Vec<Option<CacheEntry>>,
}

impl ExecutionReport {
    pub fn succeeded(&self) -> bool {
        self.terminal_entry.is_some()
    }

    /// Containers started by this execution.
    pub fn launches(&self) -> usize {
        self.nodes.iter().filter(|n| n.launched).count()
    }

    pub fn status(&self, node: &NodeRef) -> Option<&NodeStatus> {
        self.nodes.iter().find(|n| &n.node == node)
    }

    pub fn entry(&self, node: &NodeRef) -> Option<&CacheEntry> {
        let i = self.nodes.iter().position(|n| &n.node == node)?;
        self.entries[i].as_ref()
    }

    /// The terminal entry, or an execution error describing the first failure.
    pub fn into_terminal(self) -> Result<CacheEntry> {
        if let Some(e) = self.terminal_entry {
            return Ok(e);
        }
        let failed = self.nodes.iter().find(|n| n.state == NodeState::Failed);
        Err(match failed {
            Some(n) => {
                let mut reason = n.error.clone().unwrap_or_else(|| "failed".into());
                let tail = n.stderr.trim();
                if !tail.is_empty() {
                    reason.push_str(&format!("; stderr: {tail}"));
                }
                Error::Execution {
                    node: n.node.to_string(),
                    reason,
                }
            }
            None => Error::Execution {
                node: self.terminal.to_string(),
                reason: "not executed".into(),
            },
        })
    }
}

/// Output of a finished node as seen by its consumers.
#[derive(Clone, Debug, PartialEq)]
pub enum VerifiedOutput {
    Run(RunFile),
    PassThrough,
}

/// Retrieval components must leave a parseable `run.txt`; other outputs pass
/// through unchanged. Extra files are allowed and kept.
pub fn verify_output(kind: ComponentKind, dir: &Path) -> Result<VerifiedOutput> {
    if !kind.produces_run() {
        return Ok(VerifiedOutput::PassThrough);
    }
    let path = dir.join(RUN_FILE);
    if !path.is_file() {
        return Err(Error::Integrity(format!(
            "{} component left no {RUN_FILE} in its output directory",
            kind.as_str()
        )));
    }
    formats::read_run_file(&path).map(VerifiedOutput::Run)
}

/// Reads the run file of a sealed retrieval output.
pub fn read_run(entry: &CacheEntry) -> Result<RunFile> {
    formats::read_run_file(&entry.output_path.join(RUN_FILE))
}

static LAUNCH_COUNTER: AtomicU64 = AtomicU64::new(0);

pub struct Executor {
    hub: DatasetHub,
    uploads_dir: PathBuf,
    cache: CacheStore,
    scratch: PathBuf,
    backend: Arc<dyn ContainerBackend>,
    parallelism: usize,
}

/// Per-execution constants shared by all node runs.
struct RunContext<'a> {
    request: &'a ExecutionRequest,
    dataset: Dataset,
    dataset_digest: Digest,
    full_rank_input: PathBuf,
    images: HashMap<String, String>,
}

struct NodeOutcome {
    state: NodeState,
    entry: Option<CacheEntry>,
    key: Option<CacheKey>,
    error: Option<String>,
    stderr: String,
    violations: Vec<String>,
    launched: bool,
}

impl NodeOutcome {
    fn failed(key: Option<CacheKey>, error: String) -> Self {
        NodeOutcome {
            state: NodeState::Failed,
            entry: None,
            key,
            error: Some(error),
            stderr: String::new(),
            violations: Vec::new(),
            launched: false,
        }
    }
}

impl Executor {
    pub fn new(store_root: &Path, backend: Arc<dyn ContainerBackend>) -> Self {
        Executor {
            hub: DatasetHub::new(store_root),
            uploads_dir: store_root.join("registry").join("uploads"),
            cache: CacheStore::new(store_root),
            scratch: store_root.join("scratch"),
            backend,
            parallelism: 1,
        }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn cache(&self) -> &CacheStore {
        &self.cache
    }

    pub fn backend(&self) -> &Arc<dyn ContainerBackend> {
        &self.backend
    }

    /// Runs the pipeline's nodes in dependency order, up to `parallelism` at
    /// a time. Node failures are reported in the result, not as `Err`;
    /// `Err` means the request itself could not be served.
    pub fn execute(&self, request: &ExecutionRequest) -> Result<ExecutionReport> {
        request.limits.validate()?;
        if request.rerank_depth == 0 {
            return Err(Error::InvalidArgument("re-rank depth must be ≥ 1".into()));
        }
        let dataset = self.hub.get(&request.dataset_id)?;
        if dataset.is_withheld() {
            return Err(Error::Withheld(format!(
                "dataset `{}` was exported without its content; it cannot be used for execution",
                dataset.id()
            )));
        }
        let mut images = HashMap::new();
        for node in &request.pipeline.nodes {
            if let Node::Component(c) = node {
                if !images.contains_key(&c.image_ref) {
                    images.insert(c.image_ref.clone(), self.backend.image_digest(&c.image_ref)?);
                }
            }
        }
        let ctx = RunContext {
            request,
            dataset_digest: dataset.input_digest(),
            full_rank_input: self.hub.full_rank_input(&dataset)?,
            dataset,
            images,
        };
        let (statuses, entries) = self.schedule(&ctx);
        let terminal_entry = entries.last().cloned().flatten();
        Ok(ExecutionReport {
            dataset_id: request.dataset_id.clone(),
            terminal: request.pipeline.terminal.clone(),
            nodes: statuses,
            terminal_entry,
            entries,
        })
    }

    fn schedule(&self, ctx: &RunContext<'_>) -> (Vec<NodeStatus>, Vec<Option<CacheEntry>>) {
        struct State {
            done: Vec<Option<NodeStatus>>,
            entries: Vec<Option<CacheEntry>>,
            running: Vec<bool>,
            seq: u64,
        }
        let nodes = &ctx.request.pipeline.nodes;
        let n = nodes.len();
        let index: HashMap<NodeRef, usize> = nodes.iter().enumerate().map(|(i, n)| (n.node_ref(), i)).collect();
        let deps: Vec<Vec<usize>> = nodes
            .iter()
            .map(|n| n.predecessors().iter().filter_map(|p| index.get(p).copied()).collect())
            .collect();
        let shared = Mutex::new(State {
            done: vec![None; n],
            entries: vec![None; n],
            running: vec![false; n],
            seq: 0,
        });
        let wake = Condvar::new();

        let worker = || {
            let mut st = shared.lock().expect("scheduler poisoned");
            loop {
                if st.done.iter().all(Option::is_some) {
                    wake.notify_all();
                    return;
                }
                let ready = (0..n).find(|&i| {
                    st.done[i].is_none() && !st.running[i] && deps[i].iter().all(|&d| st.done[d].is_some())
                });
                let Some(i) = ready else {
                    st = wake.wait(st).expect("scheduler poisoned");
                    continue;
                };
                st.seq += 1;
                let started_seq = st.seq;
                if deps[i].iter().any(|&d| st.entries[d].is_none()) {
                    st.seq += 1;
                    let finished_seq = st.seq;
                    st.done[i] = Some(NodeStatus {
                        node: nodes[i].node_ref(),
                        state: NodeState::Skipped,
                        cache_key: None,
                        output_digest: None,
                        error: Some("a predecessor failed".into()),
                        stderr: String::new(),
                        violations: Vec::new(),
                        launched: false,
                        started_seq,
                        finished_seq,
                        wall_ms: 0,
                    });
                    wake.notify_all();
                    continue;
                }
                st.running[i] = true;
                let preds: Vec<CacheEntry> = deps[i]
                    .iter()
                    .map(|&d| st.entries[d].clone().expect("checked above"))
                    .collect();
                drop(st);
                let clock = Instant::now();
                let outcome = self.run_node(ctx, &nodes[i], &preds);
                let wall_ms = clock.elapsed().as_millis() as u64;
                st = shared.lock().expect("scheduler poisoned");
                st.seq += 1;
                let finished_seq = st.seq;
                st.running[i] = false;
                st.done[i] = Some(NodeStatus {
                    node: nodes[i].node_ref(),
                    state: outcome.state,
                    cache_key: outcome.key,
                    output_digest: outcome.entry.as_ref().map(|e| e.output_digest.clone()),
                    error: outcome.error,
                    stderr: outcome.stderr,
                    violations: outcome.violations,
                    launched: outcome.launched,
                    started_seq,
                    finished_seq,
                    wall_ms,
                });
                st.entries[i] = outcome.entry;
                wake.notify_all();
            }
        };
        std::thread::scope(|s| {
            for _ in 0..self.parallelism.min(n.max(1)) {
                s.spawn(worker);
            }
        });
        let st = shared.into_inner().expect("scheduler poisoned");
        (st.done.into_iter().map(|s| s.expect("all nodes finished")).collect(), st.entries)
    }

    fn run_node(&self, ctx: &RunContext<'_>, node: &Node, preds: &[CacheEntry]) -> NodeOutcome {
        let request = ctx.request;
        let pred_refs: Vec<&CacheEntry> = preds.iter().collect();
        let component = node.as_component();
        let rerank_depth = component
            .filter(|c| c.kind == ComponentKind::ReRank)
            .map(|_| request.rerank_depth);
        let image_digest = component.map(|c| ctx.images[&c.image_ref].as_str());
        let key = match cache_key(
            node,
            image_digest,
            ctx.dataset.id(),
            &ctx.dataset_digest,
            &pred_refs,
            rerank_depth,
        ) {
            Ok(k) => k,
            Err(e) => return NodeOutcome::failed(None, e.to_string()),
        };
        let attempt = || -> Result<NodeOutcome> {
            if !request.use_cache {
                fs::create_dir_all(&self.scratch).at(&self.scratch)?;
                let staging = tempfile::Builder::new()
                    .prefix(&format!("{}-", key.short()))
                    .tempdir_in(&self.scratch)
                    .at(&self.scratch)?;
                for sub in ["output", "logs"] {
                    fs::create_dir(staging.path().join(sub)).at(staging.path())?;
                }
                let mut out = self.produce(ctx, node, &key, preds, staging.path())?;
                if let Some(provenance) = out.1.take() {
                    let dir = cache::seal_staged(staging, &provenance)?;
                    out.0.entry = Some(cache::load_entry(&dir)?);
                }
                return Ok(out.0);
            }
            let hit = |entry: CacheEntry| NodeOutcome {
                state: NodeState::CacheHit,
                entry: Some(entry),
                key: Some(key.clone()),
                error: None,
                stderr: String::new(),
                violations: Vec::new(),
                launched: false,
            };
            if let Some(e) = self.cache.get(&key)? {
                return Ok(hit(e));
            }
            let _lock = self.cache.lock(&key)?;
            if let Some(e) = self.cache.get(&key)? {
                return Ok(hit(e));
            }
            let staging = self.cache.stage()?;
            let (mut outcome, provenance) = self.produce(ctx, node, &key, preds, staging.path())?;
            if let Some(provenance) = provenance {
                outcome.entry = Some(self.cache.commit(staging, provenance)?);
            }
            Ok(outcome)
        };
        attempt().unwrap_or_else(|e| NodeOutcome::failed(Some(key.clone()), e.to_string()))
    }

    /// Produces the node's output below `staging/output`. Returns the outcome
    /// and, on success, the provenance to seal with it.
    fn produce(
        &self,
        ctx: &RunContext<'_>,
        node: &Node,
        key: &CacheKey,
        preds: &[CacheEntry],
        staging: &Path,
    ) -> Result<(NodeOutcome, Option<Provenance>)> {
        let started_at = Utc::now();
        let clock = Instant::now();
        let output = staging.join("output");
        let mut provenance = Provenance {
            key: key.clone(),
            output_digest: Digest::of_bytes(b""),
            node: node.node_ref(),
            kind: None,
            image_ref: None,
            image_digest: None,
            command: None,
            resolved_command: None,
            dataset_id: ctx.dataset.id().to_string(),
            dataset_digest: ctx.dataset_digest.clone(),
            predecessors: preds
                .iter()
                .map(|p| cache::PredecessorRecord {
                    node: p.provenance.node.clone(),
                    key: p.key.clone(),
                    output_digest: p.output_digest.clone(),
                })
                .collect(),
            rerank_depth: None,
            rerank_input_digest: None,
            started_at: String::new(),
            finished_at: String::new(),
            resources: cache::ResourceUsage {
                backend: self.backend.name().to_string(),
                wall_ms: 0,
                exit_code: None,
                limits: ctx.request.limits.clone(),
            },
        };
        let mut outcome = NodeOutcome {
            state: NodeState::Executed,
            entry: None,
            key: Some(key.clone()),
            error: None,
            stderr: String::new(),
            violations: Vec::new(),
            launched: false,
        };

        match node {
            Node::Upload(u) => {
                let payload = self.uploads_dir.join(&u.upload_id).join(u.version.to_string());
                digest::copy_tree(&payload, &output)
                    .map_err(|e| Error::Execution {
                        node: node.node_ref().to_string(),
                        reason: format!("upload payload could not be materialized: {e}"),
                    })?;
            }
            Node::Component(c) => {
                provenance.kind = Some(c.kind);
                provenance.image_ref = Some(c.image_ref.clone());
                provenance.image_digest = Some(ctx.images[&c.image_ref].clone());
                provenance.command = Some(c.command.clone());
                let input_dir = if c.kind == ComponentKind::ReRank {
                    let source = preds
                        .iter()
                        .find(|p| p.provenance.kind.is_some_and(ComponentKind::produces_run))
                        .ok_or_else(|| Error::Pipeline(format!("`{}` has no retrieval predecessor", c.component_id)))?;
                    let run = read_run(source)?;
                    let options = RerankOptions {
                        depth: ctx.request.rerank_depth,
                        lenient: false,
                    };
                    let (dir, digest) = self.hub.materialize_rerank(&ctx.dataset, &run, options)?;
                    provenance.rerank_depth = Some(ctx.request.rerank_depth);
                    provenance.rerank_input_digest = Some(digest);
                    dir
                } else {
                    ctx.full_rank_input.clone()
                };
                let resolved = resolve_command(
                    &c.command,
                    &CommandContext {
                        input_dataset: INPUT_MOUNT,
                        output_dir: OUTPUT_MOUNT,
                        input_run_root: INPUT_RUN_MOUNT,
                        predecessors: preds.len(),
                    },
                )?;
                let mut mounts = vec![Mount::read_only(input_dir, INPUT_MOUNT)];
                for (p, dir) in preds.iter().zip(&resolved.run_dirs) {
                    mounts.push(Mount::read_only(&p.output_path, dir));
                }
                mounts.push(Mount {
                    host: output.clone(),
                    container: OUTPUT_MOUNT.to_string(),
                    writable: true,
                });
                let spec = SandboxSpec {
                    name: format!(
                        "irexp-{}-{}-{}",
                        key.short(),
                        std::process::id(),
                        LAUNCH_COUNTER.fetch_add(1, Ordering::Relaxed)
                    ),
                    image_ref: c.image_ref.clone(),
                    command: resolved.command.clone(),
                    env: resolved.env,
                    mounts,
                    network: false,
                };
                provenance.resolved_command = Some(resolved.command);
                outcome.launched = true;
                let result = match self.backend.run(&spec, &ctx.request.limits) {
                    Ok(r) => r,
                    Err(e) => {
                        outcome.state = NodeState::Failed;
                        outcome.error = Some(e.to_string());
                        return Ok((outcome, None));
                    }
                };
                for (name, bytes) in [("stdout", &result.stdout), ("stderr", &result.stderr)] {
                    let p = staging.join("logs").join(name);
                    fs::write(&p, bytes).at(&p)?;
                }
                provenance.resources.exit_code = Some(result.exit_code);
                outcome.stderr = String::from_utf8_lossy(&result.stderr).into_owned();
                outcome.violations = result.violations.clone();
                let failure = if !result.violations.is_empty() {
                    Some(format!("sandbox violation: {}", result.violations.join("; ")))
                } else if result.timed_out {
                    Some(format!("timed out after {:?}", ctx.request.limits.timeout))
                } else if result.exit_code != 0 {
                    Some(format!("exit code {}", result.exit_code))
                } else {
                    verify_output(c.kind, &output).err().map(|e| format!("invalid output: {e}"))
                };
                if let Some(reason) = failure {
                    outcome.state = NodeState::Failed;
                    outcome.error = Some(reason);
                    return Ok((outcome, None));
                }
            }
        }
        provenance.output_digest = Digest::of_tree(&output)?;
        provenance.started_at = crate::registry::timestamp(started_at);
        provenance.finished_at = crate::registry::timestamp(Utc::now());
        provenance.resources.wall_ms = clock.elapsed().as_millis() as u64;
        Ok((outcome, Some(provenance)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_output_rules() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(verify_output(ComponentKind::ReRank, dir.path()), Err(Error::Integrity(_))));
        assert_eq!(verify_output(ComponentKind::Generic, dir.path()).unwrap(), VerifiedOutput::PassThrough);
        fs::write(dir.path().join(RUN_FILE), "q1 Q0 d1 1 2.5 t\n").unwrap();
        fs::write(dir.path().join("index.bin"), "extra").unwrap();
        match verify_output(ComponentKind::FullRank, dir.path()).unwrap() {
            VerifiedOutput::Run(r) => assert_eq!(r.tag(), "t"),
            other => panic!("{other:?}"),
        }
        fs::write(dir.path().join(RUN_FILE), "garbage\n").unwrap();
        assert!(matches!(verify_output(ComponentKind::FullRank, dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn limits() {
        ResourceLimits::default().validate().unwrap();
        let zero = ResourceLimits {
            cpus: 0.0,
            ..ResourceLimits::default()
        };
        assert!(zero.validate().is_err());
    }
}
