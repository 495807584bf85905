//! Shared setup for the integration tests and an nDCG oracle written
//! independently of the library evaluator.
#![allow(dead_code)]

pub mod strategies;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use irexp::dataset_hub::NewDataset;
use irexp::executor::mock::MockBackend;
use irexp::toy::{self, ToyPipelines};
use irexp::{Platform, PlatformConfig};

pub struct Toy {
    pub dir: tempfile::TempDir,
    pub platform: Platform,
    pub backend: Arc<MockBackend>,
    pub pipes: ToyPipelines,
}

impl Toy {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Source text files of the canonical collection.
    pub fn qrels_text(&self) -> String {
        std::fs::read_to_string(self.path("src/toy/qrels.txt")).unwrap()
    }
}

/// A store with the public `toy` dataset (with qrels) and both toy pipelines.
/// With `variant`, also a confidential `toy-b` dataset built from the variant
/// collection.
pub fn toy_platform(variant: bool) -> Toy {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(MockBackend::with_fixtures());
    let platform = Platform::with_backend(PlatformConfig::new(dir.path().join("store")), backend.clone());
    let files = toy::collection().write_to(&dir.path().join("src/toy")).unwrap();
    platform
        .register_dataset(NewDataset::new("toy", &files.documents, &files.topics).qrels(&files.qrels))
        .unwrap();
    if variant {
        let files = toy::variant().write_to(&dir.path().join("src/toy-b")).unwrap();
        platform
            .register_dataset(
                NewDataset::new("toy-b", &files.documents, &files.topics)
                    .qrels(&files.qrels)
                    .confidential(true),
            )
            .unwrap();
    }
    let pipes = toy::define_pipelines(&mut platform.registry().unwrap(), &dir.path().join("work")).unwrap();
    Toy {
        dir,
        platform,
        backend,
        pipes,
    }
}

/// Opens a second platform over another store root inside the same tempdir.
pub fn fresh_platform(root: &Path) -> Platform {
    Platform::with_backend(PlatformConfig::new(root), Arc::new(MockBackend::with_fixtures()))
}

// -- oracle ------------------------------------------------------------------

/// `qid -> docno -> grade` from TREC qrels text.
pub fn oracle_qrels(text: &str) -> BTreeMap<String, HashMap<String, i64>> {
    let mut out: BTreeMap<String, HashMap<String, i64>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        out.entry(f[0].to_string())
            .or_default()
            .insert(f[2].to_string(), f[3].parse().unwrap());
    }
    out
}

/// `qid -> [(docno, score)]` from TREC run text.
pub fn oracle_run(text: &str) -> BTreeMap<String, Vec<(String, f64)>> {
    let mut out: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        out.entry(f[0].to_string())
            .or_default()
            .push((f[2].to_string(), f[4].parse().unwrap()));
    }
    out
}

fn gain(grade: i64) -> f64 {
    if grade <= 0 {
        0.0
    } else {
        2f64.powi(grade as i32) - 1.0
    }
}

fn dcg(grades: &[i64], k: usize) -> f64 {
    let mut total = 0.0;
    for (i, g) in grades.iter().take(k).enumerate() {
        total += gain(*g) / (i as f64 + 2.0).log2();
    }
    total
}

/// Brute-force nDCG@k of one query: sort by score descending (docno ascending
/// on ties), compute DCG, and divide by the DCG of the grades sorted
/// descending.
pub fn oracle_ndcg(docs: &[(String, f64)], judged: &HashMap<String, i64>, k: usize) -> f64 {
    let mut ranked = docs.to_vec();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    let actual: Vec<i64> = ranked.iter().map(|(d, _)| *judged.get(d).unwrap_or(&0)).collect();
    let mut ideal: Vec<i64> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = dcg(&ideal, k);
    if best == 0.0 {
        0.0
    } else {
        dcg(&actual, k) / best
    }
}

/// Per-query oracle scores over every judged query; missing queries score 0.
pub fn oracle_evaluate(run_text: &str, qrels_text: &str, k: usize) -> BTreeMap<String, f64> {
    let run = oracle_run(run_text);
    oracle_qrels(qrels_text)
        .into_iter()
        .map(|(qid, judged)| {
            let v = run.get(&qid).map_or(0.0, |docs| oracle_ndcg(docs, &judged, k));
            (qid, v)
        })
        .collect()
}

/// Exhaustive ideal DCG: the maximum DCG over every ordering of the judged
/// documents. Only usable for a handful of documents.
pub fn exhaustive_idcg(grades: &[i64], k: usize) -> f64 {
    fn permute(items: &mut Vec<i64>, at: usize, k: usize, best: &mut f64) {
        if at == items.len() {
            *best = best.max(dcg(items, k));
            return;
        }
        for i in at..items.len() {
            items.swap(at, i);
            permute(items, at + 1, k, best);
            items.swap(at, i);
        }
    }
    let mut best = 0.0;
    permute(&mut grades.to_vec(), 0, k, &mut best);
    best
}

/// nDCG of an explicit ranking with the exhaustive ideal.
pub fn exhaustive_ndcg(ranking: &[&str], judged: &HashMap<String, i64>, k: usize) -> f64 {
    let mut seen = std::collections::HashSet::new();
    let grades: Vec<i64> = ranking
        .iter()
        .filter(|d| seen.insert(**d))
        .map(|d| *judged.get(*d).unwrap_or(&0))
        .collect();
    let all: Vec<i64> = judged.values().copied().collect();
    let best = exhaustive_idcg(&all, k);
    if best == 0.0 {
        0.0
    } else {
        dcg(&grades, k) / best
    }
}

/// Type-7 sample quantile straight from its definition with 1-based order
/// statistics: h = (n - 1) p + 1, x_floor(h) + (h - floor(h)) (x_ceil(h) - x_floor(h)).
pub fn oracle_quantile(values: &[f64], p: f64) -> f64 {
    let mut x = values.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (x.len() as f64 - 1.0) * p + 1.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    x[lo - 1] + (h - h.floor()) * (x[hi - 1] - x[lo - 1])
}
