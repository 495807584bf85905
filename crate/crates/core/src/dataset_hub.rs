//! Dataset registration, `default_text` synthesis, re-rank file construction
//! and the access matrix.
//!
//! Default access (no grants):
//!
//! | resource  | participant | organizer | unregistered |
//! |-----------|-------------|-----------|--------------|
//! | documents | ✓           | ✓         | ✗†           |
//! | topics    | ✓           | ✓         | ✗†           |
//! | re-rank   | ✓           | ✓         | ✗†           |
//! | qrels     | ✗†          | ✓         | ✗†           |
//!
//! † an organizer grant lifts the denial. On confidential (blind) datasets the
//! participant's ✓ cells become ✗†: software still reads the data inside the
//! sandbox, but nothing can be downloaded.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::digest::Digest;
use crate::error::{Error, IoContext, Result};
use crate::formats::{
    self, Compression, DocumentRecord, OpaqueMap, Qrel, RerankEntry, RunFile, TopicRecord,
};
use crate::ids;

pub const DOCUMENTS_FILE: &str = "documents.jsonl.gz";
pub const TOPICS_FILE: &str = "topics.jsonl.gz";
pub const RERANK_FILE: &str = "re-rank.jsonl.gz";
pub const QRELS_FILE: &str = "qrels.txt";
pub const META_FILE: &str = "meta.json";

pub const DEFAULT_RERANK_DEPTH: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Documents,
    Topics,
    Rerank,
    Qrels,
}

impl Resource {
    pub const ALL: [Resource; 4] = [Resource::Documents, Resource::Topics, Resource::Rerank, Resource::Qrels];

    pub fn as_str(self) -> &'static str {
        match self {
            Resource::Documents => "documents",
            Resource::Topics => "topics",
            Resource::Rerank => "rerank",
            Resource::Qrels => "qrels",
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Resource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "documents" | "docs" => Ok(Resource::Documents),
            "topics" => Ok(Resource::Topics),
            "rerank" | "re-rank" => Ok(Resource::Rerank),
            "qrels" => Ok(Resource::Qrels),
            _ => Err(Error::InvalidArgument(format!("unknown resource `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessRole {
    Participant,
    Organizer,
    Unregistered,
}

impl AccessRole {
    pub const ALL: [AccessRole; 3] = [AccessRole::Participant, AccessRole::Organizer, AccessRole::Unregistered];

    pub fn as_str(self) -> &'static str {
        match self {
            AccessRole::Participant => "participant",
            AccessRole::Organizer => "organizer",
            AccessRole::Unregistered => "unregistered",
        }
    }
}

impl fmt::Display for AccessRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AccessRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "participant" | "p" => Ok(AccessRole::Participant),
            "organizer" | "o" => Ok(AccessRole::Organizer),
            "unregistered" | "u" => Ok(AccessRole::Unregistered),
            _ => Err(Error::InvalidArgument(format!("unknown role `{s}`"))),
        }
    }
}

/// An organizer decision for one cell of the access matrix of one dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessGrant {
    pub dataset_id: String,
    pub resource: Resource,
    pub role: AccessRole,
    pub granted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DenialReason {
    /// Not part of the role's default access.
    NotPermitted,
    /// Blind dataset: readable by sandboxed software only.
    SandboxOnly,
    /// The action itself is reserved to organizers.
    OrganizerOnly,
}

impl fmt::Display for DenialReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenialReason::NotPermitted => "not permitted",
            DenialReason::SandboxOnly => "confidential dataset, sandbox-only access",
            DenialReason::OrganizerOnly => "organizers only",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, thiserror::Error)]
#[error(
    "{role} may not access {resource} of dataset `{dataset_id}`: {reason}{}",
    if *liftable { " (an organizer grant can lift this)" } else { "" }
)]
pub struct Denial {
    pub dataset_id: String,
    pub resource: Resource,
    pub role: AccessRole,
    pub reason: DenialReason,
    /// Whether an organizer grant could lift the denial.
    pub liftable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DefaultAccess {
    Allowed,
    Denied { reason: DenialReason, liftable: bool },
}

/// The matrix cell for `(resource, role)` before any grant is applied.
pub fn default_access(resource: Resource, role: AccessRole, confidential: bool) -> DefaultAccess {
    use AccessRole::*;
    match (role, resource) {
        (Organizer, _) => DefaultAccess::Allowed,
        (Participant, Resource::Qrels) | (Unregistered, _) => DefaultAccess::Denied {
            reason: DenialReason::NotPermitted,
            liftable: true,
        },
        (Participant, _) if confidential => DefaultAccess::Denied {
            reason: DenialReason::SandboxOnly,
            liftable: true,
        },
        (Participant, _) => DefaultAccess::Allowed,
    }
}

/// Applies `grants` on top of the default matrix.
pub fn decide(
    dataset_id: &str,
    confidential: bool,
    resource: Resource,
    role: AccessRole,
    grants: &[AccessGrant],
) -> std::result::Result<(), Denial> {
    match default_access(resource, role, confidential) {
        DefaultAccess::Allowed => Ok(()),
        DefaultAccess::Denied { reason, liftable } => {
            let lifted = liftable
                && grants
                    .iter()
                    .rev()
                    .find(|g| g.dataset_id == dataset_id && g.resource == resource && g.role == role)
                    .is_some_and(|g| g.granted);
            if lifted {
                Ok(())
            } else {
                Err(Denial {
                    dataset_id: dataset_id.to_string(),
                    resource,
                    role,
                    reason,
                    liftable,
                })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// default_text

/// Which raw fields make up a record's `default_text`, and how they are joined.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefaultTextRule {
    pub source_fields: Vec<String>,
    #[serde(default = "default_joiner")]
    pub joiner: String,
}

fn default_joiner() -> String {
    " ".to_string()
}

impl DefaultTextRule {
    pub fn new<S: Into<String>>(fields: impl IntoIterator<Item = S>) -> Result<Self> {
        let source_fields: Vec<String> = fields.into_iter().map(Into::into).collect();
        if source_fields.is_empty() {
            return Err(Error::InvalidArgument("default_text rule needs at least one source field".into()));
        }
        Ok(DefaultTextRule {
            source_fields,
            joiner: default_joiner(),
        })
    }

    pub fn with_joiner(mut self, joiner: &str) -> Self {
        self.joiner = joiner.to_string();
        self
    }
}

/// Rules applied at registration; `None` keeps the file's own `text`/`query`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefaultTextRules {
    pub documents: Option<DefaultTextRule>,
    pub topics: Option<DefaultTextRule>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedText {
    pub text: String,
    /// Set when none of the source fields carried text.
    pub warning: Option<String>,
}

pub fn resolve_default_text(raw: &OpaqueMap, rule: &DefaultTextRule) -> ResolvedText {
    fn render(value: &Value, joiner: &str) -> Option<String> {
        match value {
            Value::Null => None,
            Value::String(s) if s.is_empty() => None,
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            Value::Array(items) => {
                let parts: Vec<String> = items.iter().filter_map(|v| render(v, joiner)).collect();
                (!parts.is_empty()).then(|| parts.join(joiner))
            }
            Value::Object(_) => None,
        }
    }
    let parts: Vec<String> = rule
        .source_fields
        .iter()
        .filter_map(|f| raw.get(f).and_then(|v| render(v, &rule.joiner)))
        .collect();
    if parts.is_empty() {
        let warning = format!("none of the fields [{}] present", rule.source_fields.join(", "));
        tracing::warn!("default_text: {warning}");
        return ResolvedText {
            text: String::new(),
            warning: Some(warning),
        };
    }
    ResolvedText {
        text: parts.join(&rule.joiner),
        warning: None,
    }
}

// ---------------------------------------------------------------------------
// re-rank construction

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RerankOptions {
    pub depth: usize,
    /// Skip (with a warning) run lines whose docno is not in the corpus
    /// instead of failing.
    pub lenient: bool,
}

impl Default for RerankOptions {
    fn default() -> Self {
        RerankOptions {
            depth: DEFAULT_RERANK_DEPTH,
            lenient: false,
        }
    }
}

/// Joins the top `depth` lines of each query of `run` with topic and document
/// text, carrying over the previous stage's score and rank.
pub fn build_rerank(
    documents: &[DocumentRecord],
    topics: &[TopicRecord],
    run: &RunFile,
    options: RerankOptions,
) -> Result<Vec<RerankEntry>> {
    if options.depth < 1 {
        return Err(Error::InvalidArgument("re-rank depth must be ≥ 1".into()));
    }
    let docs: HashMap<&str, &DocumentRecord> = documents.iter().map(|d| (d.docno.as_str(), d)).collect();
    let tops: HashMap<&str, &TopicRecord> = topics.iter().map(|t| (t.qid.as_str(), t)).collect();

    for line in run.lines() {
        if !tops.contains_key(line.qid.as_str()) {
            return Err(Error::Integrity(format!("run references unknown qid \"{}\"", line.qid)));
        }
        if !options.lenient && !docs.contains_key(line.docno.as_str()) {
            return Err(Error::Integrity(format!("run references unknown docno \"{}\"", line.docno)));
        }
    }

    let mut entries = Vec::new();
    for (qid, mut lines) in run.by_query() {
        let topic = tops[qid];
        lines.sort_by_key(|l| l.rank);
        let mut next_rank = 1u32;
        for line in lines.into_iter().filter(|l| (l.rank as usize) <= options.depth) {
            let Some(doc) = docs.get(line.docno.as_str()) else {
                tracing::warn!(qid, docno = %line.docno, "skipping unknown docno");
                continue;
            };
            let score = line.score.value();
            if !score.is_finite() {
                return Err(Error::Invariant(format!(
                    "score of (\"{qid}\", \"{}\") must be finite to build a re-rank file",
                    line.docno
                )));
            }
            entries.push(RerankEntry {
                qid: qid.to_string(),
                query: topic.query.clone(),
                original_topic: topic.original_topic.clone(),
                docno: doc.docno.clone(),
                text: doc.text.clone(),
                original_document: doc.original_document.clone(),
                // equals line.rank unless lenient mode skipped an earlier line
                rank: next_rank,
                score,
            });
            next_rank += 1;
        }
    }
    // scores must not contradict ranks; serialization would refuse otherwise
    formats::rerank_to_bytes(&entries, Compression::None)?;
    Ok(entries)
}

// ---------------------------------------------------------------------------
// hub

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDigests {
    pub documents: Digest,
    pub topics: Digest,
    pub qrels: Option<Digest>,
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub id: String,
    /// Corpus label used to macro-average leaderboards; defaults to the id.
    pub corpus: String,
    pub confidential: bool,
    pub rules: DefaultTextRules,
    pub digests: DatasetDigests,
    /// `false` for datasets imported from an archive that withheld them.
    pub content_included: bool,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    meta: DatasetMeta,
    dir: PathBuf,
}

impl Dataset {
    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn corpus(&self) -> &str {
        &self.meta.corpus
    }

    pub fn confidential(&self) -> bool {
        self.meta.confidential
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn is_withheld(&self) -> bool {
        !self.meta.content_included
    }

    fn content_path(&self, file: &str) -> Result<PathBuf> {
        if self.is_withheld() {
            return Err(Error::Withheld(format!("content of dataset `{}` is not available", self.id())));
        }
        Ok(self.dir.join(file))
    }

    pub fn documents_path(&self) -> Result<PathBuf> {
        self.content_path(DOCUMENTS_FILE)
    }

    pub fn topics_path(&self) -> Result<PathBuf> {
        self.content_path(TOPICS_FILE)
    }

    pub fn qrels_path(&self) -> Result<Option<PathBuf>> {
        if self.meta.digests.qrels.is_none() {
            return Ok(None);
        }
        self.content_path(QRELS_FILE).map(Some)
    }

    pub fn has_qrels(&self) -> bool {
        self.meta.digests.qrels.is_some()
    }

    /// Digest over what software sees: documents and topics.
    pub fn input_digest(&self) -> Digest {
        Digest::of_parts([
            ("documents", self.meta.digests.documents.as_str()),
            ("topics", self.meta.digests.topics.as_str()),
        ])
    }

    /// Digest over all dataset files.
    pub fn digest(&self) -> Digest {
        let qrels = self.meta.digests.qrels.as_ref().map(Digest::as_str).unwrap_or("");
        Digest::of_parts([
            ("documents", self.meta.digests.documents.as_str()),
            ("topics", self.meta.digests.topics.as_str()),
            ("qrels", qrels),
        ])
    }

    pub fn load_documents(&self) -> Result<Vec<DocumentRecord>> {
        formats::read_documents_file(&self.documents_path()?)
    }

    pub fn load_topics(&self) -> Result<Vec<TopicRecord>> {
        formats::read_topics_file(&self.topics_path()?)
    }

    pub fn load_qrels(&self) -> Result<Option<Vec<Qrel>>> {
        match self.qrels_path()? {
            Some(p) => formats::read_qrels_file(&p).map(Some),
            None => Ok(None),
        }
    }
}

/// Source files for [`DatasetHub::register`].
#[derive(Clone, Debug)]
pub struct NewDataset {
    pub id: String,
    pub documents: PathBuf,
    pub topics: PathBuf,
    pub qrels: Option<PathBuf>,
    pub confidential: bool,
    pub rules: DefaultTextRules,
    pub corpus: Option<String>,
}

impl NewDataset {
    pub fn new(id: &str, documents: impl Into<PathBuf>, topics: impl Into<PathBuf>) -> Self {
        NewDataset {
            id: id.to_string(),
            documents: documents.into(),
            topics: topics.into(),
            qrels: None,
            confidential: false,
            rules: DefaultTextRules::default(),
            corpus: None,
        }
    }

    pub fn qrels(mut self, path: impl Into<PathBuf>) -> Self {
        self.qrels = Some(path.into());
        self
    }

    pub fn confidential(mut self, confidential: bool) -> Self {
        self.confidential = confidential;
        self
    }

    pub fn corpus(mut self, corpus: &str) -> Self {
        self.corpus = Some(corpus.to_string());
        self
    }

    pub fn rules(mut self, rules: DefaultTextRules) -> Self {
        self.rules = rules;
        self
    }
}

/// Dataset registry rooted at a store directory:
/// `datasets/<id>/{documents.jsonl.gz, topics.jsonl.gz, qrels.txt, meta.json}`,
/// `grants/<id>.json` and staged sandbox inputs below `inputs/`.
#[derive(Clone, Debug)]
pub struct DatasetHub {
    root: PathBuf,
}

impl DatasetHub {
    pub fn new(store_root: impl Into<PathBuf>) -> Self {
        DatasetHub { root: store_root.into() }
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.root.join("datasets")
    }

    fn grants_path(&self, id: &str) -> PathBuf {
        self.root.join("grants").join(format!("{id}.json"))
    }

    fn inputs_dir(&self) -> PathBuf {
        self.root.join("inputs")
    }

    /// Validates the files, applies `default_text` rules and copies canonical
    /// gzip renderings into the hub. Datasets are immutable afterwards.
    pub fn register(&self, new: NewDataset) -> Result<Dataset> {
        ids::check("dataset", &new.id)?;
        if self.exists(&new.id) {
            return Err(Error::AlreadyExists {
                kind: "dataset",
                id: new.id,
            });
        }
        let mut documents = formats::read_documents_file(&new.documents)?;
        let mut topics = formats::read_topics_file(&new.topics)?;
        let qrels = new.qrels.as_deref().map(formats::read_qrels_file).transpose()?;
        if let Some(rule) = &new.rules.documents {
            for d in &mut documents {
                d.text = resolve_default_text(&d.original_document, rule).text;
            }
        }
        if let Some(rule) = &new.rules.topics {
            for t in &mut topics {
                t.query = resolve_default_text(&t.original_topic, rule).text;
            }
        }

        let staging = self.staging_dir()?;
        let doc_bytes = formats::documents_to_bytes(&documents, Compression::Gzip)?;
        let topic_bytes = formats::topics_to_bytes(&topics, Compression::Gzip)?;
        write(&staging.path().join(DOCUMENTS_FILE), &doc_bytes)?;
        write(&staging.path().join(TOPICS_FILE), &topic_bytes)?;
        let qrels_digest = match &qrels {
            Some(q) => {
                let bytes = formats::qrels_to_bytes(q)?;
                write(&staging.path().join(QRELS_FILE), &bytes)?;
                Some(Digest::of_bytes(&bytes))
            }
            None => None,
        };
        let meta = DatasetMeta {
            corpus: new.corpus.clone().unwrap_or_else(|| new.id.clone()),
            id: new.id,
            confidential: new.confidential,
            rules: new.rules,
            digests: DatasetDigests {
                documents: Digest::of_bytes(&doc_bytes),
                topics: Digest::of_bytes(&topic_bytes),
                qrels: qrels_digest,
            },
            content_included: true,
        };
        self.commit(staging, meta)
    }

    /// Installs dataset files copied verbatim from an archive after checking
    /// them against `meta`'s digests.
    pub fn install(&self, meta: DatasetMeta, source_dir: &Path) -> Result<Dataset> {
        ids::check("dataset", &meta.id)?;
        if self.exists(&meta.id) {
            return Err(Error::AlreadyExists {
                kind: "dataset",
                id: meta.id,
            });
        }
        let staging = self.staging_dir()?;
        if meta.content_included {
            let mut files = vec![(DOCUMENTS_FILE, Some(&meta.digests.documents)), (TOPICS_FILE, Some(&meta.digests.topics))];
            if meta.digests.qrels.is_some() {
                files.push((QRELS_FILE, meta.digests.qrels.as_ref()));
            }
            for (file, expected) in files {
                let src = source_dir.join(file);
                let found = Digest::of_file(&src)?;
                let expected = expected.expect("listed with digest");
                if &found != expected {
                    return Err(Error::DigestMismatch {
                        path: src.display().to_string(),
                        expected: expected.to_string(),
                        found: found.to_string(),
                    });
                }
                fs::copy(&src, staging.path().join(file)).at(&src)?;
            }
        }
        self.commit(staging, meta)
    }

    fn staging_dir(&self) -> Result<tempfile::TempDir> {
        let dir = self.datasets_dir();
        fs::create_dir_all(&dir).at(&dir)?;
        tempfile::Builder::new().prefix(".staging-").tempdir_in(&dir).at(&dir)
    }

    fn commit(&self, staging: tempfile::TempDir, meta: DatasetMeta) -> Result<Dataset> {
        write(&staging.path().join(META_FILE), &serde_json::to_vec_pretty(&meta)?)?;
        let target = self.datasets_dir().join(&meta.id);
        let staged = staging.keep();
        // rename onto an existing (non-empty) dataset directory fails, which
        // serializes concurrent registrations of one id
        if let Err(e) = fs::rename(&staged, &target) {
            let _ = fs::remove_dir_all(&staged);
            if target.exists() {
                return Err(Error::AlreadyExists {
                    kind: "dataset",
                    id: meta.id,
                });
            }
            return Err(Error::IoAt { path: target, source: e });
        }
        Ok(Dataset { meta, dir: target })
    }

    pub fn exists(&self, id: &str) -> bool {
        self.datasets_dir().join(id).join(META_FILE).is_file()
    }

    pub fn get(&self, id: &str) -> Result<Dataset> {
        ids::check("dataset", id)?;
        let dir = self.datasets_dir().join(id);
        let meta_path = dir.join(META_FILE);
        if !meta_path.is_file() {
            return Err(Error::not_found("dataset", id));
        }
        let meta: DatasetMeta = serde_json::from_slice(&fs::read(&meta_path).at(&meta_path)?)?;
        Ok(Dataset { meta, dir })
    }

    pub fn list(&self) -> Result<Vec<Dataset>> {
        let dir = self.datasets_dir();
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut names = Vec::new();
        for entry in fs::read_dir(&dir).at(&dir)? {
            let name = entry.at(&dir)?.file_name().to_string_lossy().into_owned();
            if !name.starts_with('.') && self.exists(&name) {
                names.push(name);
            }
        }
        names.sort();
        names.iter().map(|n| self.get(n)).collect()
    }

    pub fn grants(&self, id: &str) -> Result<Vec<AccessGrant>> {
        let path = self.grants_path(id);
        if !path.is_file() {
            return Ok(Vec::new());
        }
        Ok(serde_json::from_slice(&fs::read(&path).at(&path)?)?)
    }

    /// Flips one liftable cell of a dataset's access matrix. Only organizers
    /// may do this.
    pub fn set_grant(&self, actor: AccessRole, grant: AccessGrant) -> Result<()> {
        let dataset = self.get(&grant.dataset_id)?;
        if actor != AccessRole::Organizer {
            return Err(Denial {
                dataset_id: grant.dataset_id,
                resource: grant.resource,
                role: actor,
                reason: DenialReason::OrganizerOnly,
                liftable: false,
            }
            .into());
        }
        match default_access(grant.resource, grant.role, dataset.confidential()) {
            DefaultAccess::Denied { liftable: true, .. } => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "access of {} to {} is fixed and cannot be granted or revoked",
                    grant.role, grant.resource
                )))
            }
        }
        let mut cells: BTreeMap<(Resource, AccessRole), bool> = self
            .grants(&grant.dataset_id)?
            .into_iter()
            .map(|g| ((g.resource, g.role), g.granted))
            .collect();
        cells.insert((grant.resource, grant.role), grant.granted);
        let all: Vec<AccessGrant> = cells
            .into_iter()
            .map(|((resource, role), granted)| AccessGrant {
                dataset_id: grant.dataset_id.clone(),
                resource,
                role,
                granted,
            })
            .collect();
        let path = self.grants_path(&grant.dataset_id);
        write_atomic(&path, &serde_json::to_vec_pretty(&all)?)
    }

    /// Resolves a resource to a file (or, for re-rank, the directory of
    /// materialized re-rank files) if `role` may download it.
    pub fn fetch(&self, id: &str, resource: Resource, role: AccessRole) -> Result<PathBuf> {
        let dataset = self.get(id)?;
        let grants = self.grants(id)?;
        fetch(&dataset, resource, role, &grants, &self.inputs_dir())
    }

    /// Stages `documents.jsonl.gz` and `topics.jsonl.gz` (and nothing else)
    /// in a directory suitable as a full-rank `$inputDataset`.
    pub fn full_rank_input(&self, dataset: &Dataset) -> Result<PathBuf> {
        let target = self
            .inputs_dir()
            .join("full-rank")
            .join(format!("{}-{}", dataset.id(), dataset.input_digest().short()));
        if target.is_dir() {
            return Ok(target);
        }
        let parent = target.parent().expect("nested path");
        fs::create_dir_all(parent).at(parent)?;
        let staging = tempfile::Builder::new().prefix(".staging-").tempdir_in(parent).at(parent)?;
        for file in [DOCUMENTS_FILE, TOPICS_FILE] {
            let src = dataset.dir.join(file);
            let dst = staging.path().join(file);
            if fs::hard_link(&src, &dst).is_err() {
                fs::copy(&src, &dst).at(&src)?;
            }
        }
        publish_dir(staging, &target)?;
        Ok(target)
    }

    /// Builds the re-rank file for `run` and stages it as a re-rank
    /// `$inputDataset` directory. Returns the directory and the file digest.
    pub fn materialize_rerank(&self, dataset: &Dataset, run: &RunFile, options: RerankOptions) -> Result<(PathBuf, Digest)> {
        let entries = build_rerank(&dataset.load_documents()?, &dataset.load_topics()?, run, options)?;
        let bytes = formats::rerank_to_bytes(&entries, Compression::Gzip)?;
        let digest = Digest::of_bytes(&bytes);
        let target = self.inputs_dir().join("re-rank").join(dataset.id()).join(digest.as_str());
        if !target.is_dir() {
            let parent = target.parent().expect("nested path");
            fs::create_dir_all(parent).at(parent)?;
            let staging = tempfile::Builder::new().prefix(".staging-").tempdir_in(parent).at(parent)?;
            write(&staging.path().join(RERANK_FILE), &bytes)?;
            publish_dir(staging, &target)?;
        }
        Ok((target, digest))
    }
}

/// Pure access decision plus path resolution.
pub fn fetch(
    dataset: &Dataset,
    resource: Resource,
    role: AccessRole,
    grants: &[AccessGrant],
    inputs_dir: &Path,
) -> Result<PathBuf> {
    decide(dataset.id(), dataset.confidential(), resource, role, grants)?;
    match resource {
        Resource::Documents => dataset.documents_path(),
        Resource::Topics => dataset.topics_path(),
        Resource::Qrels => dataset
            .qrels_path()?
            .ok_or_else(|| Error::not_found("qrels of dataset", dataset.id())),
        Resource::Rerank => {
            if dataset.is_withheld() {
                return Err(Error::Withheld(format!("content of dataset `{}` is not available", dataset.id())));
            }
            Ok(inputs_dir.join("re-rank").join(dataset.id()))
        }
    }
}

fn publish_dir(staging: tempfile::TempDir, target: &Path) -> Result<()> {
    let staged = staging.keep();
    if fs::rename(&staged, target).is_err() {
        // lost a race against an identical materialization
        let _ = fs::remove_dir_all(&staged);
        if !target.is_dir() {
            return Err(Error::Io(std::io::Error::other(format!(
                "could not publish {}",
                target.display()
            ))));
        }
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).at(path)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().expect("file has a parent");
    fs::create_dir_all(parent).at(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).at(parent)?;
    std::io::Write::write_all(&mut tmp, bytes).at(path)?;
    tmp.persist(path).map_err(|e| Error::IoAt {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::RunLine;
    use serde_json::json;

    fn map(v: Value) -> OpaqueMap {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn default_text_concatenates_in_rule_order() {
        let rule = DefaultTextRule::new(["title", "abstract"]).unwrap();
        let r = resolve_default_text(&map(json!({"title": "A", "abstract": "B"})), &rule);
        assert_eq!(r.text, "A B");
        assert!(r.warning.is_none());
        assert_eq!(resolve_default_text(&map(json!({"title": "A"})), &rule).text, "A");
        let empty = resolve_default_text(&map(json!({})), &rule);
        assert_eq!(empty.text, "");
        assert!(empty.warning.is_some());
    }

    #[test]
    fn default_text_joiner_and_arrays() {
        let rule = DefaultTextRule::new(["b", "a"]).unwrap().with_joiner(" | ");
        let r = resolve_default_text(&map(json!({"a": ["x", "y"], "b": 3})), &rule);
        assert_eq!(r.text, "3 | x | y");
        assert!(DefaultTextRule::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn default_matrix_without_grants() {
        use AccessRole::*;
        use Resource::*;
        let allowed = |res, role, conf| matches!(default_access(res, role, conf), DefaultAccess::Allowed);
        for res in Resource::ALL {
            assert!(allowed(res, Organizer, false));
            assert!(allowed(res, Organizer, true));
            assert!(!allowed(res, Unregistered, false));
        }
        assert!(allowed(Documents, Participant, false));
        assert!(allowed(Topics, Participant, false));
        assert!(allowed(Rerank, Participant, false));
        assert!(!allowed(Qrels, Participant, false));
        assert!(!allowed(Documents, Participant, true));
    }

    #[test]
    fn grants_lift_only_matching_cells() {
        let g = AccessGrant {
            dataset_id: "toy".into(),
            resource: Resource::Topics,
            role: AccessRole::Unregistered,
            granted: true,
        };
        assert!(decide("toy", false, Resource::Topics, AccessRole::Unregistered, std::slice::from_ref(&g)).is_ok());
        assert!(decide("toy", false, Resource::Documents, AccessRole::Unregistered, std::slice::from_ref(&g)).is_err());
        assert!(decide("other", false, Resource::Topics, AccessRole::Unregistered, &[g]).is_err());
        let denial = decide("toy", false, Resource::Qrels, AccessRole::Participant, &[]).unwrap_err();
        assert!(denial.liftable);
        assert_eq!(denial.reason, DenialReason::NotPermitted);
    }

    fn docs() -> Vec<DocumentRecord> {
        vec![
            DocumentRecord {
                docno: "8182161".into(),
                text: "Goldfish can grow up to 18 inches ...".into(),
                original_document: OpaqueMap::new(),
            },
            DocumentRecord {
                docno: "d2".into(),
                text: "Other".into(),
                original_document: OpaqueMap::new(),
            },
        ]
    }

    fn topics() -> Vec<TopicRecord> {
        vec![TopicRecord {
            qid: "156493".into(),
            query: "do goldfish grow".into(),
            original_topic: OpaqueMap::new(),
        }]
    }

    #[test]
    fn rerank_joins_text_and_keeps_score_and_rank() {
        let run = RunFile::new(vec![
            RunLine::new("156493", "8182161", 1, 31.16, "bm25"),
            RunLine::new("156493", "d2", 2, 20.0, "bm25"),
        ])
        .unwrap();
        let rows = build_rerank(&docs(), &topics(), &run, RerankOptions::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].qid, "156493");
        assert_eq!(rows[0].query, "do goldfish grow");
        assert_eq!(rows[0].docno, "8182161");
        assert_eq!(rows[0].text, "Goldfish can grow up to 18 inches ...");
        assert_eq!((rows[0].rank, rows[0].score), (1, 31.16));
        let cut = build_rerank(&docs(), &topics(), &run, RerankOptions { depth: 1, lenient: false }).unwrap();
        assert_eq!(cut.len(), 1);
    }

    #[test]
    fn rerank_errors() {
        let unknown_doc = RunFile::new(vec![RunLine::new("156493", "nope", 1, 1.0, "t")]).unwrap();
        let err = build_rerank(&docs(), &topics(), &unknown_doc, RerankOptions::default()).unwrap_err();
        assert!(err.to_string().contains("\"nope\""));
        let unknown_q = RunFile::new(vec![RunLine::new("q9", "d2", 1, 1.0, "t")]).unwrap();
        assert!(build_rerank(&docs(), &topics(), &unknown_q, RerankOptions::default()).is_err());
        assert!(build_rerank(&docs(), &topics(), &unknown_doc, RerankOptions { depth: 0, lenient: false }).is_err());
        let empty = RunFile::empty("t");
        assert!(build_rerank(&docs(), &topics(), &empty, RerankOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn lenient_rerank_skips_and_renumbers() {
        let run = RunFile::new(vec![
            RunLine::new("156493", "nope", 1, 3.0, "t"),
            RunLine::new("156493", "d2", 2, 2.0, "t"),
            RunLine::new("156493", "8182161", 3, 1.0, "t"),
        ])
        .unwrap();
        let rows = build_rerank(&docs(), &topics(), &run, RerankOptions { depth: 10, lenient: true }).unwrap();
        assert_eq!(rows.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2]);
    }
}
