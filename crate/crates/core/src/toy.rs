//! A deterministic toy shared task: 100 documents, 10 topics and hand-built
//! graded judgments, plus the two pipeline shapes used throughout the
//! examples and tests (index → term-overlap → length-penalty, and
//! term-overlap + uploaded query features → feature-ltr).
//!
//! Every topic has three topic terms that appear nowhere else. Per topic:
//! two documents use all three terms repeatedly and one uses a single term
//! (grade 2), three use one or two of them (grade 1), two mention one term in
//! passing (grade 0), and one long keyword-stuffed page repeats all three
//! (grade 0). The stuffed page outranks relevant documents under pure term
//! overlap and is demoted by the length penalty. The remaining 10 documents
//! are filler and unjudged.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::error::{IoContext, Result};
use crate::fixtures::{FIXTURE_IMAGE, QUERY_FEATURES_FILE};
use crate::formats::{self, Compression, DocumentRecord, Qrel, TopicRecord};
use crate::registry::{ComponentKind, NodeRef, Registry};

const TOPIC_TERMS: [[&str; 3]; 10] = [
    ["solar", "panel", "efficiency"],
    ["coral", "reef", "bleaching"],
    ["sourdough", "starter", "hydration"],
    ["glacier", "retreat", "alps"],
    ["violin", "bow", "rosin"],
    ["honeybee", "colony", "collapse"],
    ["tidal", "turbine", "estuary"],
    ["chess", "opening", "gambit"],
    ["volcanic", "ash", "aviation"],
    ["bamboo", "scaffold", "typhoon"],
];

const FILLER: [&str; 48] = [
    "the", "a", "of", "and", "in", "report", "study", "people", "year", "new", "city", "local", "water", "market",
    "history", "science", "small", "large", "often", "during", "several", "across", "method", "result", "change",
    "system", "public", "early", "later", "common", "various", "region", "level", "group", "value", "process",
    "design", "general", "model", "simple", "field", "source", "recent", "example", "short", "long", "future",
    "project",
];

/// Small xorshift generator; the toy data must not depend on external RNGs.
struct XorShift(u64);

impl XorShift {
    fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }

    fn filler(&mut self, words: usize) -> Vec<&'static str> {
        (0..words).map(|_| FILLER[self.below(FILLER.len())]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCollection {
    pub documents: Vec<DocumentRecord>,
    pub topics: Vec<TopicRecord>,
    pub qrels: Vec<Qrel>,
}

/// Paths written by [`ToyCollection::write_to`].
#[derive(Clone, Debug)]
pub struct ToyFiles {
    pub documents: PathBuf,
    pub topics: PathBuf,
    pub qrels: PathBuf,
}

/// The canonical toy task.
pub fn collection() -> ToyCollection {
    generate(0x5eed_1234_abcd_0001, "toy-d")
}

/// Same topics and judgment structure with different filler text, document
/// order and docnos: a second dataset for replay on "differing data". No
/// document or judgment line is shared with [`collection`].
pub fn variant() -> ToyCollection {
    generate(0x0dd_ba11_cafe_0002, "var-d")
}

fn shuffle<T>(rng: &mut XorShift, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        items.swap(i, rng.below(i + 1));
    }
}

/// `(topic, grade)`; `None` for unjudged filler.
type Judgment = Option<(usize, i32)>;

fn generate(seed: u64, prefix: &str) -> ToyCollection {
    let mut rng = XorShift(seed);
    let mut docs: Vec<(Vec<&str>, Judgment)> = Vec::new();
    for (t, terms) in TOPIC_TERMS.iter().enumerate() {
        for variant in 0..2 {
            let mut words = rng.filler(12 + 9 * variant);
            for (i, term) in terms.iter().enumerate() {
                for _ in 0..(3 - variant + i % 2) {
                    words.push(term);
                }
            }
            shuffle(&mut rng, &mut words);
            docs.push((words, Some((t, 2))));
        }
        // relevant, but phrased with a single topic term
        let mut words = rng.filler(14);
        words.extend([terms[2]; 2]);
        shuffle(&mut rng, &mut words);
        docs.push((words, Some((t, 2))));
        for variant in 0..3 {
            let mut words = rng.filler(10 + 7 * variant);
            words.push(terms[variant]);
            words.push(terms[variant]);
            if variant == 2 {
                words.push(terms[0]);
            }
            shuffle(&mut rng, &mut words);
            docs.push((words, Some((t, 1))));
        }
        for variant in 0..2 {
            let mut words = rng.filler(40 + 15 * variant);
            words.push(terms[1 + variant]);
            shuffle(&mut rng, &mut words);
            docs.push((words, Some((t, 0))));
        }
        let mut words = rng.filler(160);
        for term in terms {
            words.extend([*term; 4]);
        }
        shuffle(&mut rng, &mut words);
        docs.push((words, Some((t, 0))));
    }
    for i in 0..10 {
        docs.push((rng.filler(15 + 2 * i), None));
    }
    shuffle(&mut rng, &mut docs);

    let mut documents = Vec::new();
    let mut qrels = Vec::new();
    for (i, (words, judgment)) in docs.into_iter().enumerate() {
        let docno = format!("{prefix}{:03}", i + 1);
        let text = words.join(" ");
        let mut original = Map::new();
        original.insert("docno".into(), Value::String(docno.clone()));
        original.insert("body".into(), Value::String(text.clone()));
        documents.push(DocumentRecord {
            docno: docno.clone(),
            text,
            original_document: original,
        });
        if let Some((t, grade)) = judgment {
            qrels.push(Qrel {
                topic: qid(t),
                iteration: "0".into(),
                docno,
                relevance: grade,
            });
        }
    }
    qrels.sort_by(|a, b| (&a.topic, &a.docno).cmp(&(&b.topic, &b.docno)));
    let topics = TOPIC_TERMS
        .iter()
        .enumerate()
        .map(|(t, terms)| {
            let query = terms.join(" ");
            let mut original = Map::new();
            original.insert("qid".into(), Value::String(qid(t)));
            original.insert("title".into(), Value::String(query.clone()));
            TopicRecord {
                qid: qid(t),
                query,
                original_topic: original,
            }
        })
        .collect();
    ToyCollection {
        documents,
        topics,
        qrels,
    }
}

fn qid(t: usize) -> String {
    format!("{}", t + 1)
}

impl ToyCollection {
    /// Writes `documents.jsonl.gz`, `topics.jsonl.gz` and `qrels.txt` into
    /// `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<ToyFiles> {
        fs::create_dir_all(dir).at(dir)?;
        let files = ToyFiles {
            documents: dir.join("documents.jsonl.gz"),
            topics: dir.join("topics.jsonl.gz"),
            qrels: dir.join("qrels.txt"),
        };
        let docs = formats::documents_to_bytes(&self.documents, Compression::Gzip)?;
        fs::write(&files.documents, docs).at(&files.documents)?;
        let topics = formats::topics_to_bytes(&self.topics, Compression::Gzip)?;
        fs::write(&files.topics, topics).at(&files.topics)?;
        fs::write(&files.qrels, formats::qrels_to_bytes(&self.qrels)?).at(&files.qrels)?;
        Ok(files)
    }
}

/// Per-topic weights of the uploaded query-features file.
pub fn query_features() -> BTreeMap<String, f64> {
    (0..TOPIC_TERMS.len()).map(|t| (qid(t), 0.5 + (t % 3) as f64)).collect()
}

/// Node references of the toy pipelines.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyPipelines {
    pub index: NodeRef,
    pub retrieval: NodeRef,
    pub rerank: NodeRef,
    pub features: NodeRef,
    pub ltr: NodeRef,
}

/// Defines both pipeline shapes over the bundled fixture image. `workdir`
/// receives the query-features file before it is uploaded.
pub fn define_pipelines(registry: &mut Registry, workdir: &Path) -> Result<ToyPipelines> {
    let index = registry.add_component("index-corpus", FIXTURE_IMAGE, "irexp fixture index-corpus", &[], ComponentKind::Generic)?;
    let retrieval = registry.add_component(
        "term-overlap",
        FIXTURE_IMAGE,
        "irexp fixture term-overlap --index $inputRun --k 100",
        &["index-corpus".into()],
        ComponentKind::FullRank,
    )?;
    let rerank = registry.add_component(
        "length-penalty",
        FIXTURE_IMAGE,
        "irexp fixture length-penalty --lambda 0.5",
        &["term-overlap".into()],
        ComponentKind::ReRank,
    )?;
    fs::create_dir_all(workdir).at(workdir)?;
    let features_path = workdir.join(QUERY_FEATURES_FILE);
    fs::write(&features_path, serde_json::to_vec_pretty(&query_features())?).at(&features_path)?;
    let features = registry.add_upload("query-features", &[features_path], "per-topic weights from a user study")?;
    let ltr = registry.add_component(
        "feature-ltr",
        FIXTURE_IMAGE,
        "irexp fixture feature-ltr",
        &["term-overlap".into(), "query-features".into()],
        ComponentKind::ReRank,
    )?;
    let r = |id: &str, v: u32| NodeRef::new(id, v);
    Ok(ToyPipelines {
        index: r(&index.component_id, index.version),
        retrieval: r(&retrieval.component_id, retrieval.version),
        rerank: r(&rerank.component_id, rerank.version),
        features: r(&features.upload_id, features.version),
        ltr: r(&ltr.component_id, ltr.version),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn shape() {
        let c = collection();
        assert_eq!(c.documents.len(), 100);
        assert_eq!(c.topics.len(), 10);
        assert_eq!(c.qrels.len(), 90);
        let docnos: HashSet<_> = c.documents.iter().map(|d| &d.docno).collect();
        assert_eq!(docnos.len(), 100);
        for t in &c.topics {
            let grades: Vec<i32> = c.qrels.iter().filter(|q| q.topic == t.qid).map(|q| q.relevance).collect();
            assert_eq!(grades.iter().filter(|&&g| g == 2).count(), 3);
            assert_eq!(grades.iter().filter(|&&g| g == 1).count(), 3);
        }
    }

    #[test]
    fn deterministic_and_distinct_variant() {
        assert_eq!(collection(), collection());
        assert_ne!(collection().documents, variant().documents);
        assert_eq!(collection().topics, variant().topics);
    }
}
