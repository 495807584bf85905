//! One store directory, every module wired together.
//!
//! Store layout:
//!
//! ```text
//! config.toml                     optional PlatformConfig
//! datasets/<id>/...               see dataset_hub
//! grants/<id>.json
//! registry/components.log         see registry
//! registry/uploads/<id>/<v>/...
//! cache/<key>/...                 see executor::cache
//! inputs/                         staged sandbox inputs (derived, reproducible)
//! scratch/                        uncached executions, removed after use
//! runs/<approach>/<dataset>/{run.txt, evaluation.json, sanity.json, provenance.json, record.json}
//! ```
//!
//! Reads never create directories, so non-mutating operations leave the
//! store digest unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::analytics::{self, Leaderboard, ReproReport, TaskResult};
use crate::dataset_hub::{AccessGrant, AccessRole, Dataset, DatasetHub, NewDataset, Resource, DEFAULT_RERANK_DEPTH};
use crate::digest::Digest;
use crate::error::{Error, IoContext, Result};
use crate::evaluator::{self, Evaluation, EvaluationReport, Measure};
use crate::executor::cache::{self, CacheKey, PROVENANCE_FILE};
use crate::executor::mock::MockBackend;
use crate::executor::oci::OciBackend;
use crate::executor::{ContainerBackend, ExecutionReport, ExecutionRequest, Executor, ResourceLimits, RUN_FILE};
use crate::formats::{self, RunFile};
use crate::registry::{Node, NodeRef, NodeSpec, Pipeline, Registry};
use crate::{dataset_hub, ids};

pub const CONFIG_FILE: &str = "config.toml";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const SANITY_FILE: &str = "sanity.json";
pub const RECORD_FILE: &str = "record.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Oci,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(BackendKind::Mock),
            "oci" => Ok(BackendKind::Oci),
            _ => Err(Error::InvalidArgument(format!("unknown backend `{s}` (expected mock or oci)"))),
        }
    }
}

/// Store-wide settings, read from `<store>/config.toml` when present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    #[serde(skip)]
    pub store_root: PathBuf,
    pub backend: BackendKind,
    /// Runtime CLI used by the OCI backend.
    pub oci_runtime: String,
    pub parallelism: usize,
    pub default_role: AccessRole,
    pub cpus: f64,
    pub memory_bytes: u64,
    pub timeout_secs: u64,
    pub rerank_depth: usize,
    /// Measures computed for every recorded run.
    pub measures: Vec<String>,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        let limits = ResourceLimits::default();
        PlatformConfig {
            store_root: PathBuf::new(),
            backend: BackendKind::Mock,
            oci_runtime: "docker".into(),
            parallelism: 1,
            default_role: AccessRole::Participant,
            cpus: limits.cpus,
            memory_bytes: limits.memory_bytes,
            timeout_secs: limits.timeout.as_secs(),
            rerank_depth: DEFAULT_RERANK_DEPTH,
            measures: vec!["nDCG@10".into()],
        }
    }
}

impl PlatformConfig {
    pub fn new(store_root: impl Into<PathBuf>) -> Self {
        PlatformConfig {
            store_root: store_root.into(),
            ..Default::default()
        }
    }

    /// Defaults overlaid with `<store>/config.toml` if it exists.
    pub fn load(store_root: impl Into<PathBuf>) -> Result<Self> {
        let store_root = store_root.into();
        let path = store_root.join(CONFIG_FILE);
        let mut config: PlatformConfig = if path.is_file() {
            let text = fs::read_to_string(&path).at(&path)?;
            toml::from_str(&text).map_err(|e| Error::Parse {
                source_name: path.display().to_string(),
                line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
                message: e.message().to_string(),
            })?
        } else {
            PlatformConfig::default()
        };
        config.store_root = store_root;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::InvalidArgument("parallelism must be ≥ 1".into()));
        }
        if self.rerank_depth == 0 {
            return Err(Error::InvalidArgument("re-rank depth must be ≥ 1".into()));
        }
        self.limits().validate()?;
        self.parsed_measures().map(|_| ())
    }

    pub fn limits(&self) -> ResourceLimits {
        ResourceLimits {
            cpus: self.cpus,
            memory_bytes: self.memory_bytes,
            timeout: Duration::from_secs(self.timeout_secs),
        }
    }

    pub fn parsed_measures(&self) -> Result<Vec<Measure>> {
        if self.measures.is_empty() {
            return Err(Error::InvalidArgument("at least one measure is required".into()));
        }
        self.measures.iter().map(|m| m.parse()).collect()
    }
}

/// Metadata of a recorded run, `runs/<approach>/<dataset>/record.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub approach: String,
    pub dataset_id: String,
    /// Terminal node of the producing pipeline; `None` for uploaded runs.
    pub terminal: Option<NodeRef>,
    pub cache_key: Option<CacheKey>,
    pub output_digest: Option<Digest>,
    pub rerank_depth: Option<usize>,
    pub run_digest: Digest,
    /// `None` when the dataset has no qrels.
    pub evaluation_digest: Option<Digest>,
    /// The run file itself was not published (archive import).
    #[serde(default)]
    pub run_withheld: bool,
}

/// Result of [`Platform::run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub report: ExecutionReport,
    /// Set when the terminal produced a run and it was recorded.
    pub record: Option<RunRecord>,
    pub evaluation: Option<Evaluation>,
}

pub struct Platform {
    config: PlatformConfig,
    hub: DatasetHub,
    backend: Arc<dyn ContainerBackend>,
}

impl Platform {
    /// Opens a store with the backend named in `config`. The mock backend
    /// comes with the bundled fixture images.
    pub fn open(config: PlatformConfig) -> Result<Self> {
        config.validate()?;
        let backend: Arc<dyn ContainerBackend> = match config.backend {
            BackendKind::Mock => Arc::new(MockBackend::with_fixtures()),
            BackendKind::Oci => Arc::new(OciBackend::new(&config.oci_runtime)),
        };
        Ok(Self::with_backend(config, backend))
    }

    pub fn with_backend(config: PlatformConfig, backend: Arc<dyn ContainerBackend>) -> Self {
        Platform {
            hub: DatasetHub::new(&config.store_root),
            config,
            backend,
        }
    }

    pub fn root(&self) -> &Path {
        &self.config.store_root
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn hub(&self) -> &DatasetHub {
        &self.hub
    }

    pub fn backend(&self) -> &Arc<dyn ContainerBackend> {
        &self.backend
    }

    pub fn registry(&self) -> Result<Registry> {
        Registry::open(self.root())
    }

    pub fn executor(&self) -> Executor {
        Executor::new(self.root(), self.backend.clone()).with_parallelism(self.config.parallelism)
    }

    fn runs_dir(&self) -> PathBuf {
        self.root().join("runs")
    }

    fn run_dir(&self, approach: &str, dataset_id: &str) -> PathBuf {
        self.runs_dir().join(approach).join(dataset_id)
    }

    // -- datasets ----------------------------------------------------------

    pub fn register_dataset(&self, new: NewDataset) -> Result<Dataset> {
        self.hub.register(new)
    }

    pub fn dataset(&self, id: &str) -> Result<Dataset> {
        self.hub.get(id)
    }

    pub fn datasets(&self) -> Result<Vec<Dataset>> {
        self.hub.list()
    }

    pub fn grant(&self, actor: AccessRole, grant: AccessGrant) -> Result<()> {
        self.hub.set_grant(actor, grant)
    }

    pub fn fetch(&self, dataset_id: &str, resource: Resource, role: AccessRole) -> Result<PathBuf> {
        self.hub.fetch(dataset_id, resource, role)
    }

    // -- registry ----------------------------------------------------------

    pub fn resolve_pipeline(&self, terminal: &NodeSpec) -> Result<Pipeline> {
        let registry = self.registry()?;
        let node = registry.resolve(terminal)?.node_ref();
        registry.resolve_pipeline(&node)
    }

    /// Deletes a node unless a live node, a cache entry or a recorded run
    /// references it.
    pub fn delete_node(&self, node: &NodeRef) -> Result<()> {
        let mut external = self.executor().cache().consumers_of(node)?;
        for record in self.runs()? {
            if record.terminal.as_ref() == Some(node) {
                external.push(format!("run {}/{}", record.approach, record.dataset_id));
            }
        }
        self.registry()?.delete_node(node, &external)
    }

    // -- execution ---------------------------------------------------------

    /// Executes the pipeline ending in `terminal` on a dataset. A successful
    /// run-producing terminal is recorded under the terminal's component id
    /// and evaluated when the dataset has qrels.
    pub fn run_pipeline(&self, terminal: &NodeSpec, dataset_id: &str, use_cache: bool) -> Result<PipelineRun> {
        let pipeline = self.resolve_pipeline(terminal)?;
        let report = self.execute(pipeline, dataset_id, use_cache)?;
        let (record, evaluation) = match &report.terminal_entry {
            Some(entry) if entry.provenance.kind.is_some_and(|k| k.produces_run()) => {
                let approach = report.terminal.id.clone();
                let (record, evaluation) = self.record_pipeline_run(&approach, &report)?;
                (Some(record), evaluation)
            }
            _ => (None, None),
        };
        if !use_cache {
            self.discard_scratch(&report)?;
        }
        Ok(PipelineRun {
            report,
            record,
            evaluation,
        })
    }

    fn execute(&self, pipeline: Pipeline, dataset_id: &str, use_cache: bool) -> Result<ExecutionReport> {
        let mut request = ExecutionRequest::new(pipeline, dataset_id);
        request.limits = self.config.limits();
        request.rerank_depth = self.config.rerank_depth;
        request.use_cache = use_cache;
        self.executor().execute(&request)
    }

    fn discard_scratch(&self, report: &ExecutionReport) -> Result<()> {
        let scratch = self.root().join("scratch");
        for entry in report.entries.iter().flatten() {
            if let Some(dir) = entry.output_path.parent().filter(|d| d.starts_with(&scratch)) {
                cache::remove_sealed(dir)?;
            }
        }
        Ok(())
    }

    fn record_pipeline_run(&self, approach: &str, report: &ExecutionReport) -> Result<(RunRecord, Option<Evaluation>)> {
        let entry = report.terminal_entry.as_ref().expect("checked by caller");
        let run_bytes = fs::read(entry.output_path.join(RUN_FILE)).at(entry.output_path.join(RUN_FILE))?;
        let provenance = serde_json::to_vec_pretty(&entry.provenance)?;
        let record = RunRecord {
            approach: approach.to_string(),
            dataset_id: report.dataset_id.clone(),
            terminal: Some(report.terminal.clone()),
            cache_key: Some(entry.key.clone()),
            output_digest: Some(entry.output_digest.clone()),
            rerank_depth: entry.provenance.rerank_depth.or(Some(self.config.rerank_depth)),
            run_digest: Digest::of_bytes(&run_bytes),
            evaluation_digest: None,
            run_withheld: false,
        };
        self.store_run(record, &run_bytes, Some(&provenance))
    }

    /// Records a run produced outside the platform.
    pub fn submit_run(&self, approach: &str, dataset_id: &str, run_text: &str) -> Result<(RunRecord, Option<Evaluation>)> {
        ids::check("approach", approach)?;
        self.dataset(dataset_id)?;
        let record = RunRecord {
            approach: approach.to_string(),
            dataset_id: dataset_id.to_string(),
            terminal: None,
            cache_key: None,
            output_digest: None,
            rerank_depth: None,
            run_digest: Digest::of_bytes(run_text.as_bytes()),
            evaluation_digest: None,
            run_withheld: false,
        };
        self.store_run(record, run_text.as_bytes(), None)
    }

    fn store_run(
        &self,
        mut record: RunRecord,
        run_bytes: &[u8],
        provenance: Option<&[u8]>,
    ) -> Result<(RunRecord, Option<Evaluation>)> {
        let dataset = self.dataset(&record.dataset_id)?;
        let text = std::str::from_utf8(run_bytes)
            .map_err(|_| Error::Integrity(format!("run of `{}` is not UTF-8", record.approach)))?;
        let measures = self.config.parsed_measures()?;
        let evaluation = if dataset.has_qrels() {
            Some(self.evaluate_text(text, &dataset, &measures)?)
        } else {
            None
        };
        let dir = self.run_dir(&record.approach, &record.dataset_id);
        dataset_hub::write_atomic(&dir.join(RUN_FILE), run_bytes)?;
        if let Some(p) = provenance {
            dataset_hub::write_atomic(&dir.join(PROVENANCE_FILE), p)?;
        }
        if let Some(ev) = &evaluation {
            let json = evaluator::evaluation_json(&ev.reports)?;
            record.evaluation_digest = Some(Digest::of_bytes(json.as_bytes()));
            dataset_hub::write_atomic(&dir.join(EVALUATION_FILE), json.as_bytes())?;
            dataset_hub::write_atomic(&dir.join(SANITY_FILE), evaluator::sanity_json(&ev.sanity)?.as_bytes())?;
        }
        dataset_hub::write_atomic(&dir.join(RECORD_FILE), &serde_json::to_vec_pretty(&record)?)?;
        Ok((record, evaluation))
    }

    // -- evaluation --------------------------------------------------------

    /// Sanity-checks and evaluates a run against a dataset's hidden qrels.
    /// Only scores leave this function, so any role may call it.
    pub fn evaluate(&self, run_text: &str, dataset_id: &str, measures: &[Measure]) -> Result<Evaluation> {
        let dataset = self.dataset(dataset_id)?;
        self.evaluate_text(run_text, &dataset, measures)
    }

    fn evaluate_text(&self, run_text: &str, dataset: &Dataset, measures: &[Measure]) -> Result<Evaluation> {
        let topics = dataset.load_topics()?;
        let qrels = dataset
            .load_qrels()?
            .ok_or_else(|| Error::not_found("qrels of dataset", dataset.id()))?;
        let (run, sanity) = evaluator::sanity_check_text(run_text, &topics);
        match run {
            Some(run) => evaluator::check_and_evaluate(&run, &topics, &qrels, measures),
            None => Err(Error::Sanity(sanity)),
        }
    }

    // -- recorded runs -----------------------------------------------------

    pub fn runs(&self) -> Result<Vec<RunRecord>> {
        let root = self.runs_dir();
        let mut records = Vec::new();
        if !root.is_dir() {
            return Ok(records);
        }
        for approach in sorted_dirs(&root)? {
            for dataset in sorted_dirs(&approach)? {
                let path = dataset.join(RECORD_FILE);
                if path.is_file() {
                    records.push(serde_json::from_slice(&fs::read(&path).at(&path)?)?);
                }
            }
        }
        Ok(records)
    }

    pub fn run_record(&self, approach: &str, dataset_id: &str) -> Result<RunRecord> {
        ids::check("approach", approach)?;
        ids::check("dataset", dataset_id)?;
        let path = self.run_dir(approach, dataset_id).join(RECORD_FILE);
        if !path.is_file() {
            return Err(Error::not_found("run", format!("{approach}/{dataset_id}")));
        }
        Ok(serde_json::from_slice(&fs::read(&path).at(&path)?)?)
    }

    /// Directory holding a recorded run's files.
    pub fn run_path(&self, approach: &str, dataset_id: &str) -> Result<PathBuf> {
        self.run_record(approach, dataset_id)?;
        Ok(self.run_dir(approach, dataset_id))
    }

    /// Runs on confidential datasets are visible to organizers only; everyone
    /// else sees their scores.
    pub fn fetch_run(&self, approach: &str, dataset_id: &str, role: AccessRole) -> Result<RunFile> {
        let record = self.run_record(approach, dataset_id)?;
        let dataset = self.dataset(dataset_id)?;
        if dataset.confidential() && role != AccessRole::Organizer {
            return Err(Error::Withheld(format!(
                "run `{approach}` on confidential dataset `{dataset_id}` is visible to organizers only; its scores are on the leaderboard"
            )));
        }
        if record.run_withheld {
            return Err(Error::Withheld(format!("run `{approach}` on `{dataset_id}` was not published")));
        }
        formats::read_run_file(&self.run_dir(approach, dataset_id).join(RUN_FILE))
    }

    pub fn stored_evaluation(&self, record: &RunRecord) -> Result<Option<Vec<EvaluationReport>>> {
        if record.evaluation_digest.is_none() {
            return Ok(None);
        }
        let path = self.run_dir(&record.approach, &record.dataset_id).join(EVALUATION_FILE);
        let text = fs::read_to_string(&path).at(&path)?;
        evaluator::parse_evaluation_json(&text).map(Some)
    }

    /// Per-topic scores of every recorded run under `measure`.
    pub fn task_results(&self, measure: &Measure) -> Result<Vec<TaskResult>> {
        let mut out = Vec::new();
        for record in self.runs()? {
            let Some(reports) = self.stored_evaluation(&record)? else {
                continue;
            };
            if let Some(r) = reports.into_iter().find(|r| &r.measure == measure) {
                out.push(TaskResult {
                    approach: record.approach,
                    task: record.dataset_id,
                    mean: r.mean,
                    per_topic: r.per_query,
                });
            }
        }
        Ok(out)
    }

    pub fn leaderboard(&self, measure: &Measure) -> Result<Leaderboard> {
        let results = self.task_results(measure)?;
        let tasks: BTreeSet<&str> = results.iter().map(|r| r.task.as_str()).collect();
        let mut corpus_map = BTreeMap::new();
        for task in tasks {
            corpus_map.insert(task.to_string(), self.dataset(task)?.corpus().to_string());
        }
        analytics::build_leaderboard(&results, &corpus_map)
    }

    /// Reproducibility of the origin task's preferences on each target task
    /// (every other evaluated task when `targets` is empty).
    pub fn repro(&self, origin: &str, targets: &[String], measure: &Measure) -> Result<Vec<ReproReport>> {
        let results = self.task_results(measure)?;
        let index = analytics::index_results(&results);
        let pairs = analytics::preference_pairs(origin, &index);
        if pairs.is_empty() {
            return Err(Error::Analysis(format!(
                "no preference pairs on `{origin}` (need at least two approaches with different scores)"
            )));
        }
        let targets: Vec<String> = if targets.is_empty() {
            let all: BTreeSet<&str> = results.iter().map(|r| r.task.as_str()).filter(|t| *t != origin).collect();
            all.into_iter().map(String::from).collect()
        } else {
            targets.to_vec()
        };
        targets
            .iter()
            .map(|t| analytics::repro_report(&pairs, origin, t, &index))
            .collect()
    }

    // -- replay ------------------------------------------------------------

    /// Re-executes the pipeline behind a recorded approach on any dataset.
    /// Nothing is recorded; the output is compared with the recorded one when
    /// the dataset is the original.
    pub fn replay(&self, approach: &str, dataset_id: &str) -> Result<Replay> {
        let record = self
            .runs()?
            .into_iter()
            .filter(|r| r.approach == approach && r.terminal.is_some())
            .min_by_key(|r| r.dataset_id != dataset_id)
            .ok_or_else(|| Error::not_found("pipeline run of approach", approach))?;
        let terminal = record.terminal.clone().expect("filtered");
        let registry = self.registry()?;
        let pipeline = registry.resolve_pipeline(&terminal)?;
        let mut request = ExecutionRequest::new(pipeline, dataset_id);
        request.limits = self.config.limits();
        request.rerank_depth = record.rerank_depth.unwrap_or(self.config.rerank_depth);
        let report = self.executor().execute(&request)?;
        let entry = report.clone().into_terminal()?;
        let dataset = self.dataset(dataset_id)?;
        let evaluation = if dataset.has_qrels() && entry.provenance.kind.is_some_and(|k| k.produces_run()) {
            let text = fs::read_to_string(entry.output_path.join(RUN_FILE)).at(entry.output_path.join(RUN_FILE))?;
            Some(self.evaluate_text(&text, &dataset, &self.config.parsed_measures()?)?)
        } else {
            None
        };
        let recorded_output_digest = (record.dataset_id == dataset_id)
            .then(|| record.output_digest.clone())
            .flatten();
        Ok(Replay {
            report,
            entry_key: entry.key.clone(),
            output_digest: entry.output_digest.clone(),
            output_path: entry.output_path.clone(),
            recorded_output_digest,
            evaluation,
        })
    }

    pub fn node(&self, node: &NodeRef) -> Result<Node> {
        self.registry()?.get(node).cloned()
    }
}

#[derive(Clone, Debug)]
pub struct Replay {
    pub report: ExecutionReport,
    pub entry_key: CacheKey,
    pub output_digest: Digest,
    pub output_path: PathBuf,
    /// Output digest recorded for this approach on the same dataset, if any.
    pub recorded_output_digest: Option<Digest>,
    pub evaluation: Option<Evaluation>,
}

impl Replay {
    /// `Some(true)` when the replay reproduced the recorded output bit for bit.
    pub fn reproduced(&self) -> Option<bool> {
        self.recorded_output_digest.as_ref().map(|d| d == &self.output_digest)
    }
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).at(dir)? {
        let e = e.at(dir)?;
        if e.file_type().at(e.path())?.is_dir() && !e.file_name().to_string_lossy().starts_with('.') {
            out.push(e.path());
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::NodeState;
    use crate::toy;

    fn toy_platform() -> (tempfile::TempDir, Platform, toy::ToyPipelines) {
        let tmp = tempfile::tempdir().unwrap();
        let store = tmp.path().join("store");
        let platform = Platform::open(PlatformConfig::new(&store)).unwrap();
        let files = toy::collection().write_to(&tmp.path().join("src")).unwrap();
        platform
            .register_dataset(NewDataset::new("toy", &files.documents, &files.topics).qrels(&files.qrels))
            .unwrap();
        let pipes = toy::define_pipelines(&mut platform.registry().unwrap(), &tmp.path().join("work")).unwrap();
        (tmp, platform, pipes)
    }

    #[test]
    fn config_file_overrides_defaults() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join(CONFIG_FILE), "parallelism = 3\nmeasures = [\"ndcg@5\"]\n").unwrap();
        let c = PlatformConfig::load(tmp.path()).unwrap();
        assert_eq!(c.parallelism, 3);
        assert_eq!(c.parsed_measures().unwrap(), vec![Measure::ndcg(5)]);
        fs::write(tmp.path().join(CONFIG_FILE), "parallelism = 0\n").unwrap();
        assert!(PlatformConfig::load(tmp.path()).is_err());
        fs::write(tmp.path().join(CONFIG_FILE), "bogus = 1\n").unwrap();
        assert!(PlatformConfig::load(tmp.path()).is_err());
    }

    #[test]
    fn pipeline_run_is_recorded_and_evaluated() {
        let (_tmp, platform, pipes) = toy_platform();
        let first = platform.run_pipeline(&pipes.rerank.clone().into(), "toy", true).unwrap();
        assert!(first.report.succeeded());
        let record = first.record.unwrap();
        assert_eq!(record.approach, "length-penalty");
        assert!(first.evaluation.unwrap().reports[0].mean > 0.5);
        let second = platform.run_pipeline(&"length-penalty".into(), "toy", true).unwrap();
        assert!(second.report.nodes.iter().all(|n| n.state == NodeState::CacheHit));
        assert_eq!(second.record.unwrap().output_digest, record.output_digest);
        let run = platform.fetch_run("length-penalty", "toy", AccessRole::Participant).unwrap();
        assert_eq!(run.tag(), "length-penalty");
    }

    #[test]
    fn uncached_run_leaves_no_scratch() {
        let (_tmp, platform, _) = toy_platform();
        let run = platform.run_pipeline(&"term-overlap".into(), "toy", false).unwrap();
        assert!(run.record.is_some());
        assert_eq!(run.report.launches(), 2);
        let scratch = platform.root().join("scratch");
        assert!(!scratch.exists() || fs::read_dir(&scratch).unwrap().next().is_none());
        assert!(platform.executor().cache().entries().unwrap().is_empty());
    }

    #[test]
    fn referenced_nodes_cannot_be_deleted() {
        let (_tmp, platform, pipes) = toy_platform();
        platform.run_pipeline(&pipes.retrieval.clone().into(), "toy", true).unwrap();
        let err = platform.delete_node(&pipes.retrieval).unwrap_err();
        assert!(matches!(err, Error::Referenced { .. }), "{err}");
        platform.delete_node(&pipes.ltr).unwrap();
    }

    #[test]
    fn submitted_run_with_nan_is_refused() {
        let (_tmp, platform, _) = toy_platform();
        let err = platform.submit_run("manual", "toy", "1 Q0 toy-d001 1 NaN x\n").unwrap_err();
        assert!(matches!(err, Error::Sanity(_)));
        assert!(platform.runs().unwrap().is_empty());
    }
}
