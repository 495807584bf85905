//! Self-contained experiment archives: a plain directory tree with a single
//! `manifest.json`.
//!
//! ```text
//! manifest.json
//! datasets/<id>/meta.json
//! datasets/<id>/{documents.jsonl.gz, topics.jsonl.gz, qrels.txt}   or  <file>.withheld stubs
//! registry/components.log
//! registry/uploads/<id>/<v>/...
//! images/<ref>.tar                                                 only with embed_images
//! runs/<approach>/<dataset>/{run.txt, evaluation.json, sanity.json, provenance.json, record.json}
//! ```
//!
//! A withheld file is replaced by `<file>.withheld` holding its digest, so an
//! authorized holder of the content can still verify it. The manifest lists
//! the digest of every other file and a digest over that list.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::dataset_hub::{
    self, AccessRole, DatasetMeta, Denial, DenialReason, Resource, DOCUMENTS_FILE, META_FILE, QRELS_FILE, TOPICS_FILE,
};
use crate::digest::{self, Digest};
use crate::error::{Error, IoContext, Result};
use crate::executor::cache::{CacheKey, Provenance, PROVENANCE_FILE};
use crate::executor::RUN_FILE;
use crate::formats::{self, RunFile};
use crate::platform::{Platform, Replay, RunRecord, EVALUATION_FILE, RECORD_FILE, SANITY_FILE};
use crate::registry::{Node, SnapshotNode, LOG_FILE};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
const WITHHELD_SUFFIX: &str = ".withheld";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchivedImage {
    pub image_ref: String,
    /// `None` if the exporting backend could not resolve the image.
    pub digest: Option<String>,
    /// Archive-relative path of a saved image tarball.
    pub tarball: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchivedRun {
    pub approach: String,
    pub dataset_id: String,
    pub cache_key: Option<CacheKey>,
    pub output_digest: Option<Digest>,
    pub run_digest: Digest,
    pub evaluation_digest: Option<Digest>,
    pub run_included: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub task_id: String,
    pub created_at: String,
    /// `content_included: false` marks withheld datasets.
    pub datasets: Vec<DatasetMeta>,
    pub components: Vec<SnapshotNode>,
    pub images: Vec<ArchivedImage>,
    pub runs: Vec<ArchivedRun>,
    /// Archive-relative path → digest, for every file except the manifest.
    pub files: BTreeMap<String, Digest>,
    /// Digest over `files`.
    pub content_digest: Digest,
}

impl ArchiveManifest {
    /// Equality up to the creation timestamp.
    pub fn same_content(&self, other: &ArchiveManifest) -> bool {
        let mut a = self.clone();
        a.created_at = other.created_at.clone();
        &a == other
    }

    pub fn run(&self, approach: &str, dataset_id: &str) -> Option<&ArchivedRun> {
        self.runs.iter().find(|r| r.approach == approach && r.dataset_id == dataset_id)
    }
}

fn files_digest(files: &BTreeMap<String, Digest>) -> Digest {
    Digest::of_parts(files.iter().map(|(p, d)| (p.as_str(), d.as_str())))
}

#[derive(Clone, Debug)]
pub struct ExportOptions {
    pub task_id: String,
    /// Datasets to export; all registered datasets when `None`.
    pub datasets: Option<Vec<String>>,
    /// Embed confidential dataset content. Organizers only.
    pub include_test_data: bool,
    /// Also withhold run files on confidential datasets (scores stay).
    pub withhold_confidential_runs: bool,
    /// Save image tarballs through the backend for offline replay.
    pub embed_images: bool,
    pub role: AccessRole,
}

impl ExportOptions {
    pub fn new(task_id: &str, role: AccessRole) -> Self {
        ExportOptions {
            task_id: task_id.to_string(),
            datasets: None,
            include_test_data: false,
            withhold_confidential_runs: false,
            embed_images: false,
            role,
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    fs::write(path, bytes).at(path)
}

fn copy_file(src: &Path, dst: &Path) -> Result<()> {
    write_file(dst, &fs::read(src).at(src)?)
}

fn stub(digest: &Digest) -> String {
    format!("{digest}\n")
}

fn image_file_name(image_ref: &str) -> String {
    let safe: String = image_ref
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    format!("images/{safe}.tar")
}

/// Writes an archive of the selected datasets, the whole registry and all
/// recorded runs on those datasets into `destination`, which must not exist.
pub fn export_archive(platform: &Platform, destination: &Path, options: &ExportOptions) -> Result<ArchiveManifest> {
    if options.include_test_data && options.role != AccessRole::Organizer {
        return Err(Denial {
            dataset_id: options.datasets.as_ref().map(|d| d.join(",")).unwrap_or_else(|| "*".into()),
            resource: Resource::Documents,
            role: options.role,
            reason: DenialReason::OrganizerOnly,
            liftable: false,
        }
        .into());
    }
    if destination.exists() {
        return Err(Error::AlreadyExists {
            kind: "archive destination",
            id: destination.display().to_string(),
        });
    }
    let datasets = match &options.datasets {
        Some(ids) => ids.iter().map(|id| platform.dataset(id)).collect::<Result<Vec<_>>>()?,
        None => platform.datasets()?,
    };
    let wanted: BTreeSet<&str> = datasets.iter().map(|d| d.id()).collect();
    let runs: Vec<RunRecord> = platform
        .runs()?
        .into_iter()
        .filter(|r| wanted.contains(r.dataset_id.as_str()))
        .collect();
    if runs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "task `{}` has no recorded runs to export",
            options.task_id
        )));
    }
    let missing: Vec<String> = runs
        .iter()
        .filter(|r| {
            r.cache_key.as_ref().is_some_and(|key| {
                let p = platform.run_path(&r.approach, &r.dataset_id).map(|d| d.join(PROVENANCE_FILE));
                match p.ok().filter(|p| p.is_file()).and_then(|p| fs::read(p).ok()) {
                    Some(bytes) => serde_json::from_slice::<Provenance>(&bytes).map_or(true, |p| &p.key != key),
                    None => true,
                }
            })
        })
        .map(|r| format!("{} ({}/{})", r.cache_key.as_ref().expect("filtered").short(), r.approach, r.dataset_id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Integrity(format!(
            "unresolvable cache entries: {}",
            missing.join(", ")
        )));
    }

    let parent = destination
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).at(parent)?;
    let staging = tempfile::Builder::new().prefix(".archive-").tempdir_in(parent).at(parent)?;
    let out = staging.path();

    let mut metas = Vec::new();
    for dataset in &datasets {
        let mut meta = dataset.meta().clone();
        let include = meta.content_included && (!meta.confidential || options.include_test_data);
        let dir = out.join("datasets").join(dataset.id());
        let mut files = vec![(DOCUMENTS_FILE, meta.digests.documents.clone()), (TOPICS_FILE, meta.digests.topics.clone())];
        if let Some(q) = &meta.digests.qrels {
            files.push((QRELS_FILE, q.clone()));
        }
        for (file, d) in files {
            if include {
                copy_file(&dataset.dir().join(file), &dir.join(file))?;
            } else {
                write_file(&dir.join(format!("{file}{WITHHELD_SUFFIX}")), stub(&d).as_bytes())?;
            }
        }
        meta.content_included = include;
        write_file(&dir.join(META_FILE), &serde_json::to_vec_pretty(&meta)?)?;
        metas.push(meta);
    }

    let registry = platform.registry()?;
    let log = registry.log_path();
    if log.is_file() {
        copy_file(&log, &out.join("registry").join(LOG_FILE))?;
    }
    let snapshot = registry.snapshot();
    let mut image_refs = BTreeSet::new();
    for s in &snapshot {
        match &s.node {
            Node::Upload(u) => {
                let r = s.node.node_ref();
                digest::copy_tree(
                    &registry.payload_dir(&r),
                    &out.join("registry").join("uploads").join(&u.upload_id).join(u.version.to_string()),
                )?;
            }
            Node::Component(c) => {
                image_refs.insert(c.image_ref.clone());
            }
        }
    }
    let mut images = Vec::new();
    for image_ref in image_refs {
        let digest = platform.backend().image_digest(&image_ref).ok();
        let tarball = if options.embed_images {
            let rel = image_file_name(&image_ref);
            let path = out.join(&rel);
            fs::create_dir_all(path.parent().expect("nested")).at(&path)?;
            platform.backend().save_image(&image_ref, &path)?;
            Some(rel)
        } else {
            None
        };
        images.push(ArchivedImage {
            image_ref,
            digest,
            tarball,
        });
    }

    let confidential: BTreeSet<&str> = metas.iter().filter(|m| m.confidential).map(|m| m.id.as_str()).collect();
    let mut archived_runs = Vec::new();
    for record in &runs {
        let src = platform.run_path(&record.approach, &record.dataset_id)?;
        let dst = out.join("runs").join(&record.approach).join(&record.dataset_id);
        let include_run = !record.run_withheld
            && !(options.withhold_confidential_runs && confidential.contains(record.dataset_id.as_str()));
        if include_run {
            copy_file(&src.join(RUN_FILE), &dst.join(RUN_FILE))?;
        } else {
            write_file(&dst.join(format!("{RUN_FILE}{WITHHELD_SUFFIX}")), stub(&record.run_digest).as_bytes())?;
        }
        for file in [EVALUATION_FILE, SANITY_FILE, PROVENANCE_FILE] {
            if src.join(file).is_file() {
                copy_file(&src.join(file), &dst.join(file))?;
            }
        }
        let mut record = record.clone();
        record.run_withheld = !include_run;
        write_file(&dst.join(RECORD_FILE), &serde_json::to_vec_pretty(&record)?)?;
        archived_runs.push(ArchivedRun {
            approach: record.approach.clone(),
            dataset_id: record.dataset_id.clone(),
            cache_key: record.cache_key.clone(),
            output_digest: record.output_digest.clone(),
            run_digest: record.run_digest.clone(),
            evaluation_digest: record.evaluation_digest.clone(),
            run_included: include_run,
        });
    }

    let mut files = BTreeMap::new();
    for entry in walkdir::WalkDir::new(out).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::from).at(out)?;
        if entry.file_type().is_file() {
            files.insert(digest::relative_unix_path(out, entry.path()), Digest::of_file(entry.path())?);
        }
    }
    let manifest = ArchiveManifest {
        format_version: FORMAT_VERSION,
        task_id: options.task_id.clone(),
        created_at: crate::registry::timestamp(Utc::now()),
        datasets: metas,
        components: snapshot,
        images,
        runs: archived_runs,
        content_digest: files_digest(&files),
        files,
    };
    write_file(&out.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    let staged = staging.keep();
    fs::rename(&staged, destination).at(destination)?;
    Ok(manifest)
}

pub fn read_manifest(archive: &Path) -> Result<ArchiveManifest> {
    let path = archive.join(MANIFEST_FILE);
    let manifest: ArchiveManifest = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported archive format version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

/// Reads the manifest and checks every listed file against its digest.
pub fn verify_archive(archive: &Path) -> Result<ArchiveManifest> {
    let manifest = read_manifest(archive)?;
    let found = files_digest(&manifest.files);
    if found != manifest.content_digest {
        return Err(Error::DigestMismatch {
            path: MANIFEST_FILE.into(),
            expected: manifest.content_digest.to_string(),
            found: found.to_string(),
        });
    }
    for (rel, expected) in &manifest.files {
        let path = archive.join(rel);
        let found = Digest::of_file(&path)?;
        if &found != expected {
            return Err(Error::DigestMismatch {
                path: rel.clone(),
                expected: expected.to_string(),
                found: found.to_string(),
            });
        }
    }
    Ok(manifest)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ImportSummary {
    pub task_id: String,
    pub datasets_installed: Vec<String>,
    pub datasets_withheld: Vec<String>,
    pub log_events_imported: usize,
    pub runs_imported: usize,
}

/// Verifies an archive and merges it into the platform's store. Content that
/// is already present and identical is skipped; conflicting content is
/// refused before anything is written.
pub fn import_archive(platform: &Platform, archive: &Path) -> Result<ImportSummary> {
    let manifest = verify_archive(archive)?;
    let mut summary = ImportSummary {
        task_id: manifest.task_id.clone(),
        ..Default::default()
    };

    let mut to_install = Vec::new();
    for meta in &manifest.datasets {
        if platform.hub().exists(&meta.id) {
            let local = platform.dataset(&meta.id)?;
            if local.meta().digests != meta.digests {
                return Err(Error::AlreadyExists {
                    kind: "different dataset",
                    id: meta.id.clone(),
                });
            }
        } else {
            to_install.push(meta);
        }
    }
    let mut to_copy = Vec::new();
    for run in &manifest.runs {
        let record: RunRecord = {
            let p = archive.join("runs").join(&run.approach).join(&run.dataset_id).join(RECORD_FILE);
            serde_json::from_slice(&fs::read(&p).at(&p)?)?
        };
        match platform.run_record(&run.approach, &run.dataset_id) {
            Ok(local) if local == record => {}
            Ok(_) => {
                return Err(Error::AlreadyExists {
                    kind: "different run",
                    id: format!("{}/{}", run.approach, run.dataset_id),
                })
            }
            Err(Error::NotFound { .. }) => to_copy.push(run),
            Err(e) => return Err(e),
        }
    }

    for image in &manifest.images {
        if let Some(rel) = &image.tarball {
            platform.backend().load_image(&archive.join(rel))?;
        }
    }
    for meta in to_install {
        platform.hub().install(meta.clone(), &archive.join("datasets").join(&meta.id))?;
        if meta.content_included {
            summary.datasets_installed.push(meta.id.clone());
        } else {
            summary.datasets_withheld.push(meta.id.clone());
        }
    }
    let log = archive.join("registry").join(LOG_FILE);
    if log.is_file() {
        let text = fs::read_to_string(&log).at(&log)?;
        summary.log_events_imported = platform
            .registry()?
            .import_log(&text, &archive.join("registry").join("uploads"))?;
    }
    for run in to_copy {
        let src = archive.join("runs").join(&run.approach).join(&run.dataset_id);
        let dst = platform.root().join("runs").join(&run.approach).join(&run.dataset_id);
        // the record goes last: a run is visible once its record exists
        for file in [RUN_FILE, EVALUATION_FILE, SANITY_FILE, PROVENANCE_FILE, RECORD_FILE] {
            if src.join(file).is_file() {
                dataset_hub::write_atomic(&dst.join(file), &fs::read(src.join(file)).at(src.join(file))?)?;
            }
        }
        summary.runs_imported += 1;
    }
    Ok(summary)
}

/// Reads an archived run without executing anything.
pub fn fetch_run(archive: &Path, approach: &str, dataset_id: &str) -> Result<RunFile> {
    let manifest = read_manifest(archive)?;
    let run = manifest
        .run(approach, dataset_id)
        .ok_or_else(|| Error::not_found("archived run", format!("{approach}/{dataset_id}")))?;
    if !run.run_included {
        return Err(Error::Withheld(format!(
            "run `{approach}` on `{dataset_id}` is withheld from this archive; only its scores are published"
        )));
    }
    let rel = format!("runs/{approach}/{dataset_id}/{RUN_FILE}");
    let path = archive.join(&rel);
    let found = Digest::of_file(&path)?;
    if found != run.run_digest {
        return Err(Error::DigestMismatch {
            path: rel,
            expected: run.run_digest.to_string(),
            found: found.to_string(),
        });
    }
    formats::read_run_file(&path)
}

/// Imports `archive` (a no-op for content already present) and re-executes
/// an archived approach on `dataset_id`, which may be any registered dataset.
pub fn replay(platform: &Platform, archive: Option<&Path>, approach: &str, dataset_id: &str) -> Result<Replay> {
    if let Some(archive) = archive {
        import_archive(platform, archive)?;
    }
    platform.replay(approach, dataset_id)
}

/// Every archive file, for privacy scans.
pub fn archive_files(archive: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(archive).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::from).at(archive)?;
        if entry.file_type().is_file() {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_hub::NewDataset;
    use crate::platform::PlatformConfig;
    use crate::toy;

    fn setup(confidential: bool) -> (tempfile::TempDir, Platform) {
        let tmp = tempfile::tempdir().unwrap();
        let platform = Platform::open(PlatformConfig::new(tmp.path().join("a"))).unwrap();
        let files = toy::collection().write_to(&tmp.path().join("src")).unwrap();
        platform
            .register_dataset(
                NewDataset::new("toy", &files.documents, &files.topics)
                    .qrels(&files.qrels)
                    .confidential(confidential),
            )
            .unwrap();
        toy::define_pipelines(&mut platform.registry().unwrap(), &tmp.path().join("work")).unwrap();
        platform.run_pipeline(&"length-penalty".into(), "toy", true).unwrap();
        platform.run_pipeline(&"feature-ltr".into(), "toy", true).unwrap();
        (tmp, platform)
    }

    #[test]
    fn confidential_export_withholds_content() {
        let (tmp, platform) = setup(true);
        let dest = tmp.path().join("archive");
        let m = export_archive(&platform, &dest, &ExportOptions::new("t", AccessRole::Participant)).unwrap();
        assert!(!m.datasets[0].content_included);
        assert!(!dest.join("datasets/toy/documents.jsonl.gz").exists());
        assert!(dest.join("datasets/toy/documents.jsonl.gz.withheld").is_file());
        assert!(dest.join("runs/length-penalty/toy/run.txt").is_file());
        let run = fetch_run(&dest, "length-penalty", "toy").unwrap();
        assert_eq!(run.tag(), "length-penalty");
        assert!(matches!(fetch_run(&dest, "nope", "toy"), Err(Error::NotFound { .. })));

        let mut opts = ExportOptions::new("t", AccessRole::Participant);
        opts.include_test_data = true;
        assert!(matches!(
            export_archive(&platform, &tmp.path().join("x"), &opts),
            Err(Error::Denied(_))
        ));
        opts.role = AccessRole::Organizer;
        opts.withhold_confidential_runs = true;
        let full = tmp.path().join("full");
        export_archive(&platform, &full, &opts).unwrap();
        assert!(full.join("datasets/toy/documents.jsonl.gz").is_file());
        assert!(matches!(fetch_run(&full, "length-penalty", "toy"), Err(Error::Withheld(_))));
    }

    #[test]
    fn export_is_deterministic_and_tamper_evident() {
        let (tmp, platform) = setup(false);
        let opts = ExportOptions::new("t", AccessRole::Participant);
        let a = export_archive(&platform, &tmp.path().join("e1"), &opts).unwrap();
        let b = export_archive(&platform, &tmp.path().join("e2"), &opts).unwrap();
        assert!(a.same_content(&b));
        assert!(export_archive(&platform, &tmp.path().join("e1"), &opts).is_err());

        let run = tmp.path().join("e1/runs/length-penalty/toy/run.txt");
        let mut text = fs::read_to_string(&run).unwrap();
        text = text.replacen("toy-d", "toy-x", 1);
        fs::write(&run, text).unwrap();
        let fresh = Platform::open(PlatformConfig::new(tmp.path().join("b"))).unwrap();
        match import_archive(&fresh, &tmp.path().join("e1")) {
            Err(Error::DigestMismatch { path, .. }) => assert_eq!(path, "runs/length-penalty/toy/run.txt"),
            other => panic!("{other:?}"),
        }
        assert!(fresh.runs().unwrap().is_empty());
    }

    #[test]
    fn import_then_replay() {
        let (tmp, platform) = setup(false);
        let dest = tmp.path().join("archive");
        let m = export_archive(&platform, &dest, &ExportOptions::new("t", AccessRole::Participant)).unwrap();
        let fresh = Platform::open(PlatformConfig::new(tmp.path().join("b"))).unwrap();
        let summary = import_archive(&fresh, &dest).unwrap();
        assert_eq!(summary.runs_imported, 2);
        // importing twice is a no-op
        assert_eq!(import_archive(&fresh, &dest).unwrap().runs_imported, 0);
        let replayed = replay(&fresh, None, "length-penalty", "toy").unwrap();
        assert_eq!(Some(&replayed.output_digest), m.run("length-penalty", "toy").unwrap().output_digest.as_ref());
        assert_eq!(replayed.reproduced(), Some(true));
        let again = export_archive(&fresh, &tmp.path().join("again"), &ExportOptions::new("t", AccessRole::Participant)).unwrap();
        assert!(m.same_content(&again));
    }
}
