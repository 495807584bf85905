//! Interchange files shared by every pipeline stage.
//!
//! | file                | record            | encoding                         |
//! |---------------------|-------------------|----------------------------------|
//! | `documents.jsonl.gz`| [`DocumentRecord`]| gzip, one JSON object per line   |
//! | `topics.jsonl.gz`   | [`TopicRecord`]   | gzip, one JSON object per line   |
//! | `re-rank.jsonl.gz`  | [`RerankEntry`]   | gzip, one JSON object per line   |
//! | `qrels.txt`         | [`Qrel`]          | `topic iteration docno relevance`|
//! | run files           | [`RunLine`]       | `qid iteration docno rank score tag` |
//!
//! JSON fields are always emitted in the order listed on each type and opaque
//! maps with sorted keys, so a serialized file is byte-stable and can be
//! hashed. Text formats accept any run of spaces or tabs as a separator and
//! emit a single space.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::error::{Error, IoContext, Result};

/// Raw structured fields of a source document or topic.
pub type OpaqueMap = serde_json::Map<String, Value>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Compression {
    #[default]
    None,
    Gzip,
}

impl Compression {
    pub const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

    /// Detects gzip from the first bytes of a stream.
    pub fn sniff(prefix: &[u8]) -> Self {
        if prefix.starts_with(&Self::GZIP_MAGIC) {
            Compression::Gzip
        } else {
            Compression::None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    #[serde(deserialize_with = "id_string")]
    pub docno: String,
    pub text: String,
    #[serde(default)]
    pub original_document: OpaqueMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicRecord {
    #[serde(deserialize_with = "id_string")]
    pub qid: String,
    pub query: String,
    #[serde(default, alias = "original_query")]
    pub original_topic: OpaqueMap,
}

/// One query-document pair handed to a re-ranker, with the score and rank the
/// previous stage assigned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankEntry {
    #[serde(deserialize_with = "id_string")]
    pub qid: String,
    pub query: String,
    #[serde(default, alias = "original_query")]
    pub original_topic: OpaqueMap,
    #[serde(deserialize_with = "id_string")]
    pub docno: String,
    pub text: String,
    #[serde(default)]
    pub original_document: OpaqueMap,
    pub rank: u32,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Qrel {
    pub topic: String,
    pub iteration: String,
    pub docno: String,
    pub relevance: i32,
}

/// A run score, kept as the exact decimal text it was read from so that
/// re-serializing a run never changes its bytes.
#[derive(Clone, Debug)]
pub struct Score {
    text: String,
    value: f64,
}

impl Score {
    /// Parses a decimal (or `NaN` / `inf`) score token.
    pub fn parse(text: &str) -> Option<Self> {
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            return None;
        }
        text.parse::<f64>().ok().map(|value| Score {
            text: text.to_string(),
            value,
        })
    }

    /// Shortest decimal text that round-trips to `value`.
    pub fn from_value(value: f64) -> Self {
        Score {
            text: format!("{value}"),
            value,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl From<f64> for Score {
    fn from(value: f64) -> Self {
        Score::from_value(value)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLine {
    pub qid: String,
    pub iteration: String,
    pub docno: String,
    pub rank: u32,
    pub score: Score,
    pub tag: String,
}

impl RunLine {
    pub fn new(qid: &str, docno: &str, rank: u32, score: impl Into<Score>, tag: &str) -> Self {
        RunLine {
            qid: qid.to_string(),
            iteration: "Q0".to_string(),
            docno: docno.to_string(),
            rank,
            score: score.into(),
            tag: tag.to_string(),
        }
    }
}

/// A validated run: one system tag, unique `(qid, docno)` pairs and per-query
/// ranks forming `1..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFile {
    lines: Vec<RunLine>,
    tag: String,
}

impl RunFile {
    pub fn new(lines: Vec<RunLine>) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::Invariant("run file is empty".into()));
        }
        let tag = lines[0].tag.clone();
        validate_run_lines(&lines, |_| None)?;
        Ok(RunFile { lines, tag })
    }

    /// An explicitly empty run (e.g. a stage that retrieved nothing).
    pub fn empty(tag: &str) -> Self {
        RunFile {
            lines: Vec::new(),
            tag: tag.to_string(),
        }
    }

    pub fn lines(&self) -> &[RunLine] {
        &self.lines
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Query ids in order of first appearance.
    pub fn queries(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.lines
            .iter()
            .filter(|l| seen.insert(l.qid.as_str()))
            .map(|l| l.qid.as_str())
            .collect()
    }

    /// Lines grouped by query, in order of first appearance, each group in
    /// file order.
    pub fn by_query(&self) -> Vec<(&str, Vec<&RunLine>)> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<(&str, Vec<&RunLine>)> = Vec::new();
        for line in &self.lines {
            let slot = *index.entry(line.qid.as_str()).or_insert_with(|| {
                groups.push((line.qid.as_str(), Vec::new()));
                groups.len() - 1
            });
            groups[slot].1.push(line);
        }
        groups
    }
}

fn id_string<'de, D: Deserializer<'de>>(deserializer: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Text(String),
        Signed(i64),
        Unsigned(u64),
    }
    Ok(match Id::deserialize(deserializer)? {
        Id::Text(s) => s,
        Id::Signed(n) => n.to_string(),
        Id::Unsigned(n) => n.to_string(),
    })
}

fn reader<'a, R: Read + 'a>(input: R, compression: Compression) -> Box<dyn BufRead + 'a> {
    match compression {
        Compression::None => Box::new(BufReader::new(input)),
        Compression::Gzip => Box::new(BufReader::new(MultiGzDecoder::new(input))),
    }
}

/// Yields `(line_number, line)` for every non-blank line.
fn numbered_lines<'a>(
    input: Box<dyn BufRead + 'a>,
    source: &'a str,
) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    input
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((i + 1, l))),
            Err(e) => Some(Err(Error::Parse {
                source_name: source.to_string(),
                line: i + 1,
                message: e.to_string(),
            })),
        })
}

fn parse_json_lines<T: DeserializeOwned, R: Read>(
    input: R,
    compression: Compression,
    source: &str,
) -> Result<Vec<(usize, T)>> {
    numbered_lines(reader(input, compression), source)
        .map(|item| {
            let (line, text) = item?;
            serde_json::from_str::<T>(&text)
                .map(|v| (line, v))
                .map_err(|e| Error::Parse {
                    source_name: source.to_string(),
                    line,
                    message: e.to_string(),
                })
        })
        .collect()
}

fn write_json_lines<T: Serialize, W: Write>(out: W, records: &[T], compression: Compression) -> Result<()> {
    fn emit<T: Serialize, W: Write>(mut out: W, records: &[T]) -> Result<W> {
        for r in records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(out)
    }
    match compression {
        Compression::None => {
            emit(out, records)?.flush()?;
        }
        Compression::Gzip => {
            let enc = emit(GzEncoder::new(out, flate2::Compression::default()), records)?;
            enc.finish()?.flush()?;
        }
    }
    Ok(())
}

fn write_text<W: Write>(out: W, text: &str, compression: Compression) -> Result<()> {
    match compression {
        Compression::None => {
            let mut out = out;
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
        Compression::Gzip => {
            let mut enc = GzEncoder::new(out, flate2::Compression::default());
            enc.write_all(text.as_bytes())?;
            enc.finish()?.flush()?;
        }
    }
    Ok(())
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

// ---------------------------------------------------------------------------
// documents

pub fn parse_documents<R: Read>(input: R, compression: Compression) -> Result<Vec<DocumentRecord>> {
    parse_documents_named(input, compression, "documents.jsonl")
}

fn parse_documents_named<R: Read>(input: R, compression: Compression, source: &str) -> Result<Vec<DocumentRecord>> {
    let rows = parse_json_lines::<DocumentRecord, _>(input, compression, source)?;
    check_documents(rows.iter().map(|(l, d)| (*l, d)))?;
    Ok(rows.into_iter().map(|(_, d)| d).collect())
}

fn check_documents<'a>(rows: impl Iterator<Item = (usize, &'a DocumentRecord)>) -> Result<()> {
    let mut seen = HashSet::new();
    for (line, doc) in rows {
        if doc.docno.is_empty() {
            return Err(Error::Integrity(format!("empty docno on line {line}")));
        }
        if !seen.insert(doc.docno.as_str()) {
            return Err(Error::Integrity(format!("duplicate docno \"{}\" on line {line}", doc.docno)));
        }
    }
    Ok(())
}

pub fn write_documents<W: Write>(out: W, records: &[DocumentRecord], compression: Compression) -> Result<()> {
    check_documents(records.iter().enumerate().map(|(i, d)| (i + 1, d))).map_err(into_invariant)?;
    write_json_lines(out, records, compression)
}

// ---------------------------------------------------------------------------
// topics

pub fn parse_topics<R: Read>(input: R, compression: Compression) -> Result<Vec<TopicRecord>> {
    parse_topics_named(input, compression, "topics.jsonl")
}

fn parse_topics_named<R: Read>(input: R, compression: Compression, source: &str) -> Result<Vec<TopicRecord>> {
    let rows = parse_json_lines::<TopicRecord, _>(input, compression, source)?;
    check_topics(rows.iter().map(|(l, t)| (*l, t)))?;
    Ok(rows.into_iter().map(|(_, t)| t).collect())
}

fn check_topics<'a>(rows: impl Iterator<Item = (usize, &'a TopicRecord)>) -> Result<()> {
    let mut seen = HashSet::new();
    for (line, topic) in rows {
        if topic.qid.is_empty() {
            return Err(Error::Integrity(format!("empty qid on line {line}")));
        }
        if !seen.insert(topic.qid.as_str()) {
            return Err(Error::Integrity(format!("duplicate qid \"{}\" on line {line}", topic.qid)));
        }
    }
    Ok(())
}

pub fn write_topics<W: Write>(out: W, records: &[TopicRecord], compression: Compression) -> Result<()> {
    check_topics(records.iter().enumerate().map(|(i, t)| (i + 1, t))).map_err(into_invariant)?;
    write_json_lines(out, records, compression)
}

// ---------------------------------------------------------------------------
// re-rank

pub fn parse_rerank<R: Read>(input: R, compression: Compression) -> Result<Vec<RerankEntry>> {
    parse_rerank_named(input, compression, "re-rank.jsonl")
}

fn parse_rerank_named<R: Read>(input: R, compression: Compression, source: &str) -> Result<Vec<RerankEntry>> {
    let rows = parse_json_lines::<RerankEntry, _>(input, compression, source)?;
    check_rerank(rows.iter().map(|(l, e)| (*l, e)))?;
    Ok(rows.into_iter().map(|(_, e)| e).collect())
}

fn check_rerank<'a>(rows: impl Iterator<Item = (usize, &'a RerankEntry)>) -> Result<()> {
    let mut pairs = HashSet::new();
    let mut per_query: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
    for (line, e) in rows {
        if e.qid.is_empty() || e.docno.is_empty() {
            return Err(Error::Integrity(format!("empty qid or docno on line {line}")));
        }
        if e.rank < 1 {
            return Err(Error::Integrity(format!("rank must be ≥ 1 (line {line})")));
        }
        if !e.score.is_finite() {
            return Err(Error::Integrity(format!("score must be finite (line {line})")));
        }
        if !pairs.insert((e.qid.as_str(), e.docno.as_str())) {
            return Err(Error::Integrity(format!(
                "duplicate pair (\"{}\", \"{}\") on line {line}",
                e.qid, e.docno
            )));
        }
        per_query.entry(&e.qid).or_default().push((e.rank, e.score));
    }
    for (qid, mut ranked) in per_query {
        ranked.sort_by_key(|(rank, _)| *rank);
        for (i, (rank, _)) in ranked.iter().enumerate() {
            if *rank as usize != i + 1 {
                return Err(Error::Integrity(format!("ranks of query \"{qid}\" are not contiguous from 1")));
            }
        }
        if ranked.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(Error::Integrity(format!(
                "scores of query \"{qid}\" increase while rank increases"
            )));
        }
    }
    Ok(())
}

pub fn write_rerank<W: Write>(out: W, records: &[RerankEntry], compression: Compression) -> Result<()> {
    check_rerank(records.iter().enumerate().map(|(i, e)| (i + 1, e))).map_err(into_invariant)?;
    write_json_lines(out, records, compression)
}

// ---------------------------------------------------------------------------
// qrels

/// Parses whitespace-separated `topic iteration docno relevance` lines.
/// Relevance grades outside `0..=3` are accepted and logged.
pub fn parse_qrels<R: Read>(input: R) -> Result<Vec<Qrel>> {
    parse_qrels_named(input, Compression::None, "qrels.txt")
}

fn parse_qrels_named<R: Read>(input: R, compression: Compression, source: &str) -> Result<Vec<Qrel>> {
    let mut qrels = Vec::new();
    let mut seen = HashSet::new();
    for item in numbered_lines(reader(input, compression), source) {
        let (line, text) = item?;
        let parse_err = |message: String| Error::Parse {
            source_name: source.to_string(),
            line,
            message,
        };
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(parse_err(format!("expected 4 columns, found {}", cols.len())));
        }
        let relevance: i32 = cols[3]
            .parse()
            .map_err(|_| parse_err(format!("non-integer relevance \"{}\"", cols[3])))?;
        if !(0..=3).contains(&relevance) {
            tracing::warn!(line, relevance, "relevance grade outside 0..=3");
        }
        if !seen.insert((cols[0].to_string(), cols[2].to_string())) {
            return Err(Error::Integrity(format!(
                "duplicate judgment (\"{}\", \"{}\") on line {line}",
                cols[0], cols[2]
            )));
        }
        qrels.push(Qrel {
            topic: cols[0].to_string(),
            iteration: cols[1].to_string(),
            docno: cols[2].to_string(),
            relevance,
        });
    }
    Ok(qrels)
}

pub fn write_qrels<W: Write>(out: W, qrels: &[Qrel]) -> Result<()> {
    let mut seen = HashSet::new();
    let mut text = String::new();
    for (i, q) in qrels.iter().enumerate() {
        if !(is_token(&q.topic) && is_token(&q.iteration) && is_token(&q.docno)) {
            return Err(Error::Invariant(format!(
                "qrel {} has an empty field or a field containing whitespace",
                i + 1
            )));
        }
        if !seen.insert((q.topic.as_str(), q.docno.as_str())) {
            return Err(Error::Invariant(format!(
                "duplicate judgment (\"{}\", \"{}\")",
                q.topic, q.docno
            )));
        }
        text.push_str(&format!("{} {} {} {}\n", q.topic, q.iteration, q.docno, q.relevance));
    }
    write_text(out, &text, Compression::None)
}

// ---------------------------------------------------------------------------
// runs

/// Parses a six-column TREC run. The result is never empty; see
/// [`parse_run_allow_empty`].
pub fn parse_run<R: Read>(input: R) -> Result<RunFile> {
    parse_run_named(input, Compression::None, "run", false)
}

pub fn parse_run_allow_empty<R: Read>(input: R) -> Result<RunFile> {
    parse_run_named(input, Compression::None, "run", true)
}

fn parse_run_named<R: Read>(input: R, compression: Compression, source: &str, allow_empty: bool) -> Result<RunFile> {
    let mut lines = Vec::new();
    let mut line_numbers = Vec::new();
    for item in numbered_lines(reader(input, compression), source) {
        let (line, text) = item?;
        let parse_err = |message: String| Error::Parse {
            source_name: source.to_string(),
            line,
            message,
        };
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(parse_err(format!("expected 6 columns, found {}", cols.len())));
        }
        let rank: u32 = cols[3]
            .parse()
            .map_err(|_| parse_err(format!("rank \"{}\" is not a positive integer", cols[3])))?;
        if rank < 1 {
            return Err(parse_err("rank must be ≥ 1".into()));
        }
        let score = Score::parse(cols[4]).ok_or_else(|| parse_err(format!("score \"{}\" is not a number", cols[4])))?;
        lines.push(RunLine {
            qid: cols[0].to_string(),
            iteration: cols[1].to_string(),
            docno: cols[2].to_string(),
            rank,
            score,
            tag: cols[5].to_string(),
        });
        line_numbers.push(line);
    }
    if lines.is_empty() {
        if allow_empty {
            return Ok(RunFile::empty(""));
        }
        return Err(Error::Parse {
            source_name: source.to_string(),
            line: 0,
            message: "run file is empty".into(),
        });
    }
    validate_run_lines(&lines, |i| Some(line_numbers[i])).map_err(|e| match e {
        Error::Invariant(msg) => Error::Integrity(msg),
        other => other,
    })?;
    let tag = lines[0].tag.clone();
    Ok(RunFile { lines, tag })
}

fn validate_run_lines(lines: &[RunLine], line_no: impl Fn(usize) -> Option<usize>) -> Result<()> {
    let at = |i: usize| line_no(i).map(|n| format!(" on line {n}")).unwrap_or_default();
    let tag = &lines[0].tag;
    let mut pairs = HashSet::new();
    let mut ranks: HashMap<&str, Vec<u32>> = HashMap::new();
    for (i, l) in lines.iter().enumerate() {
        if !(is_token(&l.qid) && is_token(&l.iteration) && is_token(&l.docno) && is_token(&l.tag)) {
            return Err(Error::Invariant(format!(
                "empty field or field containing whitespace{}",
                at(i)
            )));
        }
        if l.rank < 1 {
            return Err(Error::Invariant(format!("rank must be ≥ 1{}", at(i))));
        }
        if &l.tag != tag {
            return Err(Error::Invariant(format!(
                "mixed run tags \"{}\" and \"{}\"{}",
                tag,
                l.tag,
                at(i)
            )));
        }
        if !pairs.insert((l.qid.as_str(), l.docno.as_str())) {
            return Err(Error::Invariant(format!(
                "duplicate pair (\"{}\", \"{}\"){}",
                l.qid,
                l.docno,
                at(i)
            )));
        }
        ranks.entry(&l.qid).or_default().push(l.rank);
    }
    let mut qids: Vec<_> = ranks.keys().copied().collect();
    qids.sort_unstable();
    for qid in qids {
        let r = ranks.get_mut(qid).expect("key from map");
        r.sort_unstable();
        if r.iter().enumerate().any(|(i, rank)| *rank as usize != i + 1) {
            return Err(Error::Invariant(format!("ranks of query \"{qid}\" are not contiguous from 1")));
        }
    }
    Ok(())
}

pub fn write_run<W: Write>(out: W, run: &RunFile) -> Result<()> {
    if !run.lines.is_empty() {
        validate_run_lines(&run.lines, |_| None)?;
    }
    write_text(out, &run_to_string(run), Compression::None)
}

fn run_to_string(run: &RunFile) -> String {
    let mut text = String::new();
    for l in &run.lines {
        text.push_str(&format!(
            "{} {} {} {} {} {}\n",
            l.qid, l.iteration, l.docno, l.rank, l.score, l.tag
        ));
    }
    text
}

/// Canonical text of a run file: blank lines dropped, columns joined by a
/// single space, LF line endings.
pub fn normalize_run_text(text: &str) -> String {
    let mut out = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        out.push_str(&line.split_whitespace().collect::<Vec<_>>().join(" "));
        out.push('\n');
    }
    out
}

fn into_invariant(e: Error) -> Error {
    match e {
        Error::Integrity(msg) => Error::Invariant(msg),
        other => other,
    }
}

// ---------------------------------------------------------------------------
// byte and file helpers

pub fn documents_to_bytes(records: &[DocumentRecord], compression: Compression) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_documents(&mut buf, records, compression)?;
    Ok(buf)
}

pub fn topics_to_bytes(records: &[TopicRecord], compression: Compression) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_topics(&mut buf, records, compression)?;
    Ok(buf)
}

pub fn rerank_to_bytes(records: &[RerankEntry], compression: Compression) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_rerank(&mut buf, records, compression)?;
    Ok(buf)
}

pub fn qrels_to_bytes(qrels: &[Qrel]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_qrels(&mut buf, qrels)?;
    Ok(buf)
}

pub fn run_to_bytes(run: &RunFile) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_run(&mut buf, run)?;
    Ok(buf)
}

fn read_sniffed(path: &Path) -> Result<(Vec<u8>, Compression, String)> {
    let bytes = fs::read(path).at(path)?;
    let compression = Compression::sniff(&bytes);
    Ok((bytes, compression, path.display().to_string()))
}

/// Reads a documents file, detecting gzip from its magic bytes.
pub fn read_documents_file(path: &Path) -> Result<Vec<DocumentRecord>> {
    let (bytes, c, name) = read_sniffed(path)?;
    parse_documents_named(&bytes[..], c, &name)
}

pub fn read_topics_file(path: &Path) -> Result<Vec<TopicRecord>> {
    let (bytes, c, name) = read_sniffed(path)?;
    parse_topics_named(&bytes[..], c, &name)
}

pub fn read_rerank_file(path: &Path) -> Result<Vec<RerankEntry>> {
    let (bytes, c, name) = read_sniffed(path)?;
    parse_rerank_named(&bytes[..], c, &name)
}

pub fn read_qrels_file(path: &Path) -> Result<Vec<Qrel>> {
    let (bytes, c, name) = read_sniffed(path)?;
    parse_qrels_named(&bytes[..], c, &name)
}

pub fn read_run_file(path: &Path) -> Result<RunFile> {
    let (bytes, c, name) = read_sniffed(path)?;
    parse_run_named(&bytes[..], c, &name, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn document_row_parses() {
        let line = r#"{"docno": "8182161", "text": "Goldfish can grow up to 18 inches ...", "original_document": {}}"#;
        let docs = parse_documents(line.as_bytes(), Compression::None).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].docno, "8182161");
        assert_eq!(docs[0].text, "Goldfish can grow up to 18 inches ...");
    }

    #[test]
    fn empty_documents_file() {
        assert!(parse_documents(&b""[..], Compression::None).unwrap().is_empty());
    }

    #[test]
    fn duplicate_docno_names_id_and_line() {
        let input = "{\"docno\":\"d1\",\"text\":\"a\"}\n{\"docno\":\"d1\",\"text\":\"b\"}\n";
        let err = parse_documents(input.as_bytes(), Compression::None).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Integrity(_)));
        assert!(msg.contains("\"d1\"") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn malformed_json_reports_line() {
        let input = "{\"docno\":\"d1\",\"text\":\"a\"}\n{oops\n";
        match parse_documents(input.as_bytes(), Compression::None).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_text_is_rejected() {
        let input = "{\"docno\":\"d1\"}\n";
        assert!(parse_documents(input.as_bytes(), Compression::None).is_err());
    }

    #[test]
    fn topic_accepts_original_query_alias_and_emits_canonical_key() {
        let line = r#"{"qid": "156493", "query": "do goldfish grow", "original_query": {"title": "do goldfish grow"}}"#;
        let topics = parse_topics(line.as_bytes(), Compression::None).unwrap();
        assert_eq!(topics[0].original_topic["title"], json!("do goldfish grow"));
        let out = String::from_utf8(topics_to_bytes(&topics, Compression::None).unwrap()).unwrap();
        assert_eq!(
            out,
            "{\"qid\":\"156493\",\"query\":\"do goldfish grow\",\"original_topic\":{\"title\":\"do goldfish grow\"}}\n"
        );
    }

    #[test]
    fn numeric_docno_is_read_as_text() {
        let line = r#"{"qid": "156493", "query": "do goldfish grow", "original_query": {}, "docno": 8182161, "text": "Goldfish can grow up to 18 inches ...", "original_document": {}, "rank": 1, "score": 31.16}"#;
        let rows = parse_rerank(line.as_bytes(), Compression::None).unwrap();
        assert_eq!(rows[0].docno, "8182161");
        assert_eq!(rows[0].rank, 1);
        assert_eq!(rows[0].score, 31.16);
    }

    #[test]
    fn rerank_rank_zero_is_refused() {
        let entry = RerankEntry {
            qid: "q".into(),
            query: "x".into(),
            original_topic: OpaqueMap::new(),
            docno: "d".into(),
            text: "t".into(),
            original_document: OpaqueMap::new(),
            rank: 0,
            score: 1.0,
        };
        let err = rerank_to_bytes(&[entry], Compression::None).unwrap_err();
        assert!(err.to_string().contains("rank must be ≥ 1"), "{err}");
    }

    #[test]
    fn rerank_rejects_increasing_score() {
        let mk = |docno: &str, rank, score| RerankEntry {
            qid: "q".into(),
            query: "x".into(),
            original_topic: OpaqueMap::new(),
            docno: docno.into(),
            text: "t".into(),
            original_document: OpaqueMap::new(),
            rank,
            score,
        };
        assert!(rerank_to_bytes(&[mk("a", 1, 1.0), mk("b", 2, 2.0)], Compression::None).is_err());
        assert!(rerank_to_bytes(&[mk("a", 1, 1.0), mk("b", 3, 0.0)], Compression::None).is_err());
        assert!(rerank_to_bytes(&[mk("a", 1, 1.0), mk("a", 2, 0.0)], Compression::None).is_err());
        assert!(rerank_to_bytes(&[mk("a", 1, 1.0), mk("b", 2, 1.0)], Compression::None).is_ok());
    }

    #[test]
    fn gzip_output_has_magic() {
        let docs = vec![DocumentRecord {
            docno: "d".into(),
            text: "t".into(),
            original_document: OpaqueMap::new(),
        }];
        let bytes = documents_to_bytes(&docs, Compression::Gzip).unwrap();
        assert_eq!(&bytes[..2], &[0x1f, 0x8b]);
        assert_eq!(parse_documents(&bytes[..], Compression::Gzip).unwrap(), docs);
        // deterministic: no timestamp in the gzip header
        assert_eq!(bytes, documents_to_bytes(&docs, Compression::Gzip).unwrap());
    }

    #[test]
    fn qrels_line() {
        let q = parse_qrels(&b"156493 Q0 8182161 2\n"[..]).unwrap();
        assert_eq!(
            q,
            vec![Qrel {
                topic: "156493".into(),
                iteration: "Q0".into(),
                docno: "8182161".into(),
                relevance: 2
            }]
        );
    }

    #[test]
    fn qrels_blank_lines_skipped() {
        assert!(parse_qrels(&b"  \n\n\t\n"[..]).unwrap().is_empty());
    }

    #[test]
    fn qrels_non_integer_relevance() {
        match parse_qrels(&b"a Q0 b x\n"[..]).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("non-integer relevance"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn qrels_wrong_columns_and_duplicates() {
        assert!(matches!(parse_qrels(&b"a Q0 b\n"[..]), Err(Error::Parse { .. })));
        assert!(matches!(parse_qrels(&b"a Q0 b 1\na Q0 b 2\n"[..]), Err(Error::Integrity(_))));
        // out-of-range grades are accepted
        assert_eq!(parse_qrels(&b"a Q0 b -1\na Q0 c 4\n"[..]).unwrap().len(), 2);
    }

    #[test]
    fn run_line_fields() {
        let run = parse_run(&b"q1 Q0 d7 1 10.5 bm25\n"[..]).unwrap();
        let l = &run.lines()[0];
        assert_eq!((l.qid.as_str(), l.docno.as_str(), l.rank, l.tag.as_str()), ("q1", "d7", 1, "bm25"));
        assert_eq!(l.score.value(), 10.5);
        assert_eq!(run.tag(), "bm25");
    }

    #[test]
    fn run_duplicate_pair() {
        let err = parse_run(&b"q1 Q0 d7 1 2 t\nq1 Q0 d7 2 1 t\n"[..]).unwrap_err();
        assert!(err.to_string().contains("duplicate pair"), "{err}");
    }

    #[test]
    fn run_mixed_tags() {
        let err = parse_run(&b"q1 Q0 d1 1 2 a\nq1 Q0 d2 2 1 b\n"[..]).unwrap_err();
        assert!(err.to_string().contains("mixed run tags"), "{err}");
    }

    #[test]
    fn run_ranks_must_be_contiguous() {
        assert!(parse_run(&b"q1 Q0 d1 1 2 a\nq1 Q0 d2 3 1 a\n"[..]).is_err());
        assert!(parse_run(&b"q1 Q0 d1 0 2 a\n"[..]).is_err());
        // file order does not matter
        assert!(parse_run(&b"q1 Q0 d2 2 1 a\nq1 Q0 d1 1 2 a\n"[..]).is_ok());
    }

    #[test]
    fn run_empty_requires_flag() {
        assert!(parse_run(&b"\n"[..]).is_err());
        assert!(parse_run_allow_empty(&b"\n"[..]).unwrap().is_empty());
    }

    #[test]
    fn run_scores_are_preserved_verbatim() {
        let text = "q1\tQ0  d1 1 1.500000 t\nq1 Q0 d2 2 NaN t\nq1 Q0 d3 3 1e-3 t\n";
        let run = parse_run(text.as_bytes()).unwrap();
        assert!(run.lines()[1].score.value().is_nan());
        let out = String::from_utf8(run_to_bytes(&run).unwrap()).unwrap();
        assert_eq!(out, normalize_run_text(text));
        assert_eq!(out, "q1 Q0 d1 1 1.500000 t\nq1 Q0 d2 2 NaN t\nq1 Q0 d3 3 1e-3 t\n");
    }

    #[test]
    fn run_bad_numbers() {
        assert!(matches!(parse_run(&b"q1 Q0 d1 x 1 t\n"[..]), Err(Error::Parse { .. })));
        assert!(matches!(parse_run(&b"q1 Q0 d1 1 abc t\n"[..]), Err(Error::Parse { .. })));
        assert!(matches!(parse_run(&b"q1 Q0 d1 1 1\n"[..]), Err(Error::Parse { .. })));
    }

    #[test]
    fn writer_refuses_whitespace_ids() {
        let l = RunLine::new("q 1", "d", 1, 1.0, "t");
        assert!(RunFile::new(vec![l]).is_err());
        let q = Qrel {
            topic: "".into(),
            iteration: "Q0".into(),
            docno: "d".into(),
            relevance: 1,
        };
        assert!(qrels_to_bytes(&[q]).is_err());
    }

    #[test]
    fn by_query_keeps_first_appearance_order() {
        let run = parse_run(&b"b Q0 x 1 2 t\na Q0 y 1 2 t\nb Q0 z 2 1 t\n"[..]).unwrap();
        let groups = run.by_query();
        assert_eq!(groups.iter().map(|(q, _)| *q).collect::<Vec<_>>(), vec!["b", "a"]);
        assert_eq!(groups[0].1.len(), 2);
    }
}
