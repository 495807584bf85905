//! Bundled deterministic retrieval components.
//!
//! All fixtures live in one image ([`FIXTURE_IMAGE`]); the command selects
//! which one runs, e.g. `irexp fixture term-overlap --k 100`. With the mock
//! backend they run in-process; inside an OCI image containing the `irexp`
//! binary the same command runs them for real via [`HostSandbox`].
//!
//! [`HostSandbox`]: crate::executor::sandbox::HostSandbox

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::executor::mock::MockImage;
use crate::executor::{Sandbox, RUN_FILE};
use crate::formats::{self, Compression, DocumentRecord, RerankEntry, RunFile, RunLine, TopicRecord};

pub const FIXTURE_IMAGE: &str = "irexp-fixtures:1";

pub const INDEX_DOCS_FILE: &str = "file-01";
pub const INDEX_POSTINGS_FILE: &str = "file-02";
pub const QUERY_FEATURES_FILE: &str = "query-features.json";

/// `(name, purpose)` of every fixture.
pub const FIXTURES: &[(&str, &str)] = &[
    ("index-corpus", "builds a term-frequency index (file-01, file-02) from $inputDataset"),
    ("term-overlap", "full ranker: sum of ln(1 + tf) over query terms; reads the index at --index or $inputRun if given"),
    ("length-penalty", "re-ranker: previous score minus lambda * ln(1 + document length)"),
    ("feature-ltr", "re-ranker over $inputRun/1 (a run) and $inputRun/2 (uploaded query features)"),
    ("network-probe", "tries to reach the network, write to $inputDataset and read /etc/passwd"),
    ("fail", "prints to stderr and exits with status 3"),
    ("no-output", "exits successfully without writing anything"),
];

/// The mock image holding all fixtures.
pub fn mock_images() -> Vec<MockImage> {
    vec![MockImage::new(FIXTURE_IMAGE, entrypoint)]
}

/// Dispatches on the command words: the fixture name follows a `fixture`
/// word if there is one, otherwise it is the first word.
pub fn entrypoint(sb: &mut dyn Sandbox) -> i32 {
    let args = sb.args();
    let pos = args.iter().position(|a| a == "fixture").map_or(0, |i| i + 1);
    let Some(name) = args.get(pos).cloned() else {
        sb.stderr("no fixture named in command\n");
        return 2;
    };
    run(&name, sb, &args[pos + 1..])
}

pub fn run(name: &str, sb: &mut dyn Sandbox, args: &[String]) -> i32 {
    let result = match name {
        "index-corpus" => index_corpus(sb),
        "term-overlap" => term_overlap(sb, args),
        "length-penalty" => length_penalty(sb, args),
        "feature-ltr" => feature_ltr(sb),
        "network-probe" => return network_probe(sb),
        "fail" => {
            sb.stderr("deliberate failure\n");
            return 3;
        }
        "no-output" => Ok(()),
        other => Err(format!("unknown fixture `{other}`")),
    };
    match result {
        Ok(()) => 0,
        Err(message) => {
            sb.stderr(&format!("{name}: {message}\n"));
            1
        }
    }
}

type FixtureResult = Result<(), String>;

fn option(args: &[String], flag: &str) -> Option<String> {
    args.iter().position(|a| a == flag).and_then(|i| args.get(i + 1).cloned())
}

fn numeric<T: std::str::FromStr>(args: &[String], flag: &str, default: T) -> Result<T, String> {
    match option(args, flag) {
        Some(v) => v.parse().map_err(|_| format!("invalid value `{v}` for {flag}")),
        None => Ok(default),
    }
}

fn env(sb: &dyn Sandbox, key: &str) -> Result<String, String> {
    sb.env(key).ok_or_else(|| format!("${key} is not set"))
}

fn read(sb: &mut dyn Sandbox, path: &str) -> Result<Vec<u8>, String> {
    sb.read(path).map_err(|e| format!("{path}: {e}"))
}

fn write(sb: &mut dyn Sandbox, path: &str, data: &[u8]) -> FixtureResult {
    sb.write(path, data).map_err(|e| format!("{path}: {e}"))
}

fn load_documents(sb: &mut dyn Sandbox) -> Result<Vec<DocumentRecord>, String> {
    let path = format!("{}/{}", env(sb, "inputDataset")?, crate::dataset_hub::DOCUMENTS_FILE);
    let bytes = read(sb, &path)?;
    formats::parse_documents(&bytes[..], Compression::sniff(&bytes)).map_err(|e| e.to_string())
}

fn load_topics(sb: &mut dyn Sandbox) -> Result<Vec<TopicRecord>, String> {
    let path = format!("{}/{}", env(sb, "inputDataset")?, crate::dataset_hub::TOPICS_FILE);
    let bytes = read(sb, &path)?;
    formats::parse_topics(&bytes[..], Compression::sniff(&bytes)).map_err(|e| e.to_string())
}

fn load_rerank(sb: &mut dyn Sandbox) -> Result<Vec<RerankEntry>, String> {
    let path = format!("{}/{}", env(sb, "inputDataset")?, crate::dataset_hub::RERANK_FILE);
    let bytes = read(sb, &path)?;
    formats::parse_rerank(&bytes[..], Compression::sniff(&bytes)).map_err(|e| e.to_string())
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Rounds to the six decimals written to run files, so that the run's score
/// order and rank order agree exactly.
fn rounded(score: f64) -> f64 {
    format!("{score:.6}").parse().expect("formatted float parses")
}

/// Ranks `(docno, score)` pairs by score descending, docno ascending, and
/// keeps the top `k`.
fn ranked(qid: &str, mut scored: Vec<(String, f64)>, k: usize, tag: &str) -> Vec<RunLine> {
    for s in &mut scored {
        s.1 = rounded(s.1);
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (docno, score))| {
            let mut line = RunLine::new(qid, &docno, i as u32 + 1, 0.0, tag);
            line.score = formats::Score::parse(&format!("{score:.6}")).expect("formatted float parses");
            line
        })
        .collect()
}

fn write_run(sb: &mut dyn Sandbox, lines: Vec<RunLine>, tag: &str) -> FixtureResult {
    let run = if lines.is_empty() {
        RunFile::empty(tag)
    } else {
        RunFile::new(lines).map_err(|e| e.to_string())?
    };
    let bytes = formats::run_to_bytes(&run).map_err(|e| e.to_string())?;
    let path = format!("{}/{RUN_FILE}", env(sb, "outputDir")?);
    write(sb, &path, &bytes)
}

/// Term frequencies per document, documents in corpus order.
pub struct TermIndex {
    docs: Vec<(String, usize)>,
    postings: BTreeMap<String, Vec<(String, u32)>>,
}

impl TermIndex {
    pub fn build(documents: &[DocumentRecord]) -> Self {
        let mut postings: BTreeMap<String, Vec<(String, u32)>> = BTreeMap::new();
        let mut docs = Vec::with_capacity(documents.len());
        for d in documents {
            let tokens = tokenize(&d.text);
            docs.push((d.docno.clone(), tokens.len()));
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((d.docno.clone(), n));
            }
        }
        TermIndex { docs, postings }
    }

    fn render(&self) -> (String, String) {
        let docs = self.docs.iter().map(|(d, n)| format!("{d}\t{n}\n")).collect();
        let postings = self
            .postings
            .iter()
            .map(|(t, ps)| {
                let list: Vec<String> = ps.iter().map(|(d, n)| format!("{d}:{n}")).collect();
                format!("{t}\t{}\n", list.join(" "))
            })
            .collect();
        (docs, postings)
    }

    fn parse(docs: &str, postings: &str) -> Result<Self, String> {
        let bad = |l: &str| format!("malformed index line `{l}`");
        let docs = docs
            .lines()
            .map(|l| {
                let (d, n) = l.split_once('\t').ok_or_else(|| bad(l))?;
                Ok((d.to_string(), n.parse().map_err(|_| bad(l))?))
            })
            .collect::<Result<Vec<_>, String>>()?;
        let mut map = BTreeMap::new();
        for l in postings.lines() {
            let (t, list) = l.split_once('\t').ok_or_else(|| bad(l))?;
            let ps = list
                .split(' ')
                .map(|p| {
                    let (d, n) = p.rsplit_once(':').ok_or_else(|| bad(l))?;
                    Ok((d.to_string(), n.parse().map_err(|_| bad(l))?))
                })
                .collect::<Result<Vec<_>, String>>()?;
            map.insert(t.to_string(), ps);
        }
        Ok(TermIndex { docs, postings: map })
    }

    /// `sum over distinct query terms of ln(1 + tf)`, for documents matching
    /// at least one term.
    pub fn score(&self, query: &str) -> Vec<(String, f64)> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut scores: HashMap<&str, f64> = HashMap::new();
        for t in &terms {
            for (d, tf) in self.postings.get(t).map(Vec::as_slice).unwrap_or_default() {
                *scores.entry(d).or_default() += (1.0 + f64::from(*tf)).ln();
            }
        }
        let mut out: Vec<(String, f64)> = scores.into_iter().map(|(d, s)| (d.to_string(), s)).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

fn index_corpus(sb: &mut dyn Sandbox) -> FixtureResult {
    let index = TermIndex::build(&load_documents(sb)?);
    let (docs, postings) = index.render();
    let out = env(sb, "outputDir")?;
    write(sb, &format!("{out}/{INDEX_DOCS_FILE}"), docs.as_bytes())?;
    write(sb, &format!("{out}/{INDEX_POSTINGS_FILE}"), postings.as_bytes())?;
    sb.stdout(&format!("indexed {} documents\n", index.len()));
    Ok(())
}

fn term_overlap(sb: &mut dyn Sandbox, args: &[String]) -> FixtureResult {
    let k: usize = numeric(args, "--k", 1000)?;
    let topics = load_topics(sb)?;
    let index = match option(args, "--index").or_else(|| sb.env("inputRun")) {
        Some(run_dir) => {
            let docs = sb.read_string(&format!("{run_dir}/{INDEX_DOCS_FILE}")).map_err(|e| e.to_string())?;
            let postings = sb
                .read_string(&format!("{run_dir}/{INDEX_POSTINGS_FILE}"))
                .map_err(|e| e.to_string())?;
            TermIndex::parse(&docs, &postings)?
        }
        None => TermIndex::build(&load_documents(sb)?),
    };
    let tag = "term-overlap";
    let lines = topics
        .iter()
        .flat_map(|t| ranked(&t.qid, index.score(&t.query), k, tag))
        .collect();
    write_run(sb, lines, tag)
}

/// Groups re-rank entries by query, preserving file order.
fn by_query(entries: &[RerankEntry]) -> Vec<(&str, Vec<&RerankEntry>)> {
    let mut order: Vec<(&str, Vec<&RerankEntry>)> = Vec::new();
    for e in entries {
        match order.iter_mut().find(|(q, _)| *q == e.qid) {
            Some((_, v)) => v.push(e),
            None => order.push((&e.qid, vec![e])),
        }
    }
    order
}

fn length_penalty(sb: &mut dyn Sandbox, args: &[String]) -> FixtureResult {
    let lambda: f64 = numeric(args, "--lambda", 0.1)?;
    let tag = option(args, "--tag").unwrap_or_else(|| "length-penalty".into());
    let entries = load_rerank(sb)?;
    let lines = by_query(&entries)
        .into_iter()
        .flat_map(|(qid, es)| {
            let scored = es
                .iter()
                .map(|e| {
                    let len = tokenize(&e.text).len() as f64;
                    (e.docno.clone(), e.score - lambda * (1.0 + len).ln())
                })
                .collect();
            ranked(qid, scored, usize::MAX, &tag)
        })
        .collect();
    write_run(sb, lines, &tag)
}

/// `query-features.json` maps qid to a weight `w`; the new score is the
/// previous one plus `w` times the share of document tokens that are query
/// terms.
fn feature_ltr(sb: &mut dyn Sandbox) -> FixtureResult {
    let run_root = env(sb, "inputRun")?;
    let features_raw = read(sb, &format!("{run_root}/2/{QUERY_FEATURES_FILE}"))?;
    let weights: BTreeMap<String, f64> =
        serde_json::from_slice(&features_raw).map_err(|e| format!("{QUERY_FEATURES_FILE}: {e}"))?;
    // the first predecessor's run is what the re-rank file was built from
    if !sb.exists(&format!("{run_root}/1/{RUN_FILE}")) {
        return Err("first predecessor has no run".into());
    }
    let entries = load_rerank(sb)?;
    let tag = "feature-ltr";
    let lines = by_query(&entries)
        .into_iter()
        .flat_map(|(qid, es)| {
            let w = weights.get(qid).copied().unwrap_or(0.0);
            let scored = es
                .iter()
                .map(|e| {
                    let q: BTreeSet<String> = tokenize(&e.query).into_iter().collect();
                    let d = tokenize(&e.text);
                    let frac = if d.is_empty() {
                        0.0
                    } else {
                        d.iter().filter(|t| q.contains(*t)).count() as f64 / d.len() as f64
                    };
                    (e.docno.clone(), e.score + w * frac)
                })
                .collect();
            ranked(qid, scored, usize::MAX, tag)
        })
        .collect();
    write_run(sb, lines, tag)
}

/// Exits 1 when every escape attempt was refused, so a sandboxed run of
/// this fixture is always marked failed; exits 0 if anything got through.
fn network_probe(sb: &mut dyn Sandbox) -> i32 {
    let input = sb.env("inputDataset").unwrap_or_else(|| "/mnt/input".into());
    let mut escaped = Vec::new();
    match sb.connect("example.org:80") {
        Ok(()) => escaped.push("network"),
        Err(e) => sb.stderr(&format!("connect example.org:80 failed: {e}\n")),
    }
    match sb.write(&format!("{input}/probe-write"), b"probe") {
        Ok(()) => escaped.push("input write"),
        Err(e) => sb.stderr(&format!("write to $inputDataset failed: {e}\n")),
    }
    match sb.read("/etc/passwd") {
        Ok(_) => escaped.push("read outside mounts"),
        Err(e) => sb.stderr(&format!("read /etc/passwd failed: {e}\n")),
    }
    if escaped.is_empty() {
        // every attempt failed: report that as a component failure
        1
    } else {
        sb.stderr(&format!("escaped: {}\n", escaped.join(", ")));
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip_matches_direct_scoring() {
        let docs = vec![
            DocumentRecord {
                docno: "d1".into(),
                text: "apple apple banana".into(),
                original_document: Default::default(),
            },
            DocumentRecord {
                docno: "d2".into(),
                text: "Banana cherry".into(),
                original_document: Default::default(),
            },
        ];
        let built = TermIndex::build(&docs);
        let (a, b) = built.render();
        let parsed = TermIndex::parse(&a, &b).unwrap();
        assert_eq!(built.score("apple banana"), parsed.score("apple banana"));
        let s = built.score("apple banana");
        assert_eq!(s[0].0, "d1");
        assert!((s[0].1 - (3f64.ln() + 2f64.ln())).abs() < 1e-12);
        assert!((s[1].1 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ranking_is_consistent_with_scores() {
        let lines = ranked("q", vec![("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)], 10, "t");
        let order: Vec<&str> = lines.iter().map(|l| l.docno.as_str()).collect();
        assert_eq!(order, vec!["c", "a", "b"]);
        assert_eq!(lines[0].score.as_str(), "2.000000");
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("Hello, World-42!"), vec!["hello", "world", "42"]);
    }
}
