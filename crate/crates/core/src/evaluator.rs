//! Run sanity checks and nDCG@k.
//!
//! Rankings are consumed in score order (descending, docno ascending on
//! ties), never by the rank column. Judged topics missing from a run score 0.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{self, Qrel, RunFile, RunLine, TopicRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warn,
    Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingCode {
    ParseFail,
    ScoreTies,
    NanScore,
    EmptyResultSet,
    UnknownQuery,
    RankScoreContradiction,
}

impl FindingCode {
    pub fn severity(self) -> Severity {
        match self {
            FindingCode::ParseFail | FindingCode::NanScore => Severity::Error,
            _ => Severity::Warn,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FindingCode::ParseFail => "PARSE_FAIL",
            FindingCode::ScoreTies => "SCORE_TIES",
            FindingCode::NanScore => "NAN_SCORE",
            FindingCode::EmptyResultSet => "EMPTY_RESULT_SET",
            FindingCode::UnknownQuery => "UNKNOWN_QUERY",
            FindingCode::RankScoreContradiction => "RANK_SCORE_CONTRADICTION",
        }
    }
}

impl fmt::Display for FindingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub code: FindingCode,
    pub severity: Severity,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub qid: Option<String>,
    pub detail: String,
}

impl Finding {
    fn new(code: FindingCode, qid: Option<&str>, detail: String) -> Self {
        Finding {
            code,
            severity: code.severity(),
            qid: qid.map(str::to_string),
            detail,
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warn => "warn",
            Severity::Error => "error",
        };
        match &self.qid {
            Some(q) => write!(f, "{sev} {}({q}): {}", self.code, self.detail),
            None => write!(f, "{sev} {}: {}", self.code, self.detail),
        }
    }
}

/// Every finding of a check; nothing is short-circuited. `notes` carry
/// informational remarks that are not findings (e.g. run queries without
/// judgments).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub findings: Vec<Finding>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl SanityReport {
    pub fn error_count(&self) -> usize {
        self.findings.iter().filter(|f| f.severity == Severity::Error).count()
    }

    pub fn has_errors(&self) -> bool {
        self.error_count() > 0
    }

    pub fn codes(&self) -> Vec<FindingCode> {
        let mut codes: Vec<_> = self.findings.iter().map(|f| f.code).collect();
        codes.sort();
        codes.dedup();
        codes
    }

    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Checks a parsed run against the task's topics.
pub fn sanity_check(run: &RunFile, topics: &[TopicRecord]) -> SanityReport {
    let known: HashSet<&str> = topics.iter().map(|t| t.qid.as_str()).collect();
    let groups = run.by_query();
    let mut findings = Vec::new();
    for (qid, lines) in &groups {
        let nan = lines.iter().filter(|l| l.score.value().is_nan()).count();
        if nan > 0 {
            findings.push(Finding::new(
                FindingCode::NanScore,
                Some(qid),
                format!("{nan} line(s) with a NaN score"),
            ));
        }
        let mut by_score: HashMap<u64, Vec<&str>> = HashMap::new();
        for l in lines.iter().filter(|l| !l.score.value().is_nan()) {
            // +0.0 and -0.0 tie as well
            let key = (l.score.value() + 0.0).to_bits();
            by_score.entry(key).or_default().push(&l.docno);
        }
        let mut tied: Vec<&str> = by_score.values().filter(|d| d.len() > 1).flatten().copied().collect();
        if !tied.is_empty() {
            tied.sort_unstable();
            findings.push(Finding::new(
                FindingCode::ScoreTies,
                Some(qid),
                format!("{} documents share a score with another: {}", tied.len(), preview(&tied)),
            ));
        }
        let mut by_rank: Vec<&&RunLine> = lines.iter().collect();
        by_rank.sort_by_key(|l| l.rank);
        if let Some(w) = by_rank
            .windows(2)
            .find(|w| w[1].score.value() > w[0].score.value())
        {
            findings.push(Finding::new(
                FindingCode::RankScoreContradiction,
                Some(qid),
                format!(
                    "rank {} ({}) scores {} but rank {} ({}) scores higher, {}",
                    w[0].rank, w[0].docno, w[0].score, w[1].rank, w[1].docno, w[1].score
                ),
            ));
        }
        if !known.contains(qid) {
            findings.push(Finding::new(
                FindingCode::UnknownQuery,
                Some(qid),
                "query is not among the task's topics".into(),
            ));
        }
    }
    let present: HashSet<&str> = groups.iter().map(|(q, _)| *q).collect();
    for t in topics {
        if !present.contains(t.qid.as_str()) {
            findings.push(Finding::new(
                FindingCode::EmptyResultSet,
                Some(&t.qid),
                "no documents retrieved for this topic".into(),
            ));
        }
    }
    if run.is_empty() && topics.is_empty() {
        findings.push(Finding::new(FindingCode::EmptyResultSet, None, "run contains no lines".into()));
    }
    SanityReport {
        findings,
        notes: Vec::new(),
    }
}

fn preview(items: &[&str]) -> String {
    const SHOWN: usize = 5;
    let mut s = items.iter().take(SHOWN).copied().collect::<Vec<_>>().join(", ");
    if items.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", items.len() - SHOWN));
    }
    s
}

/// Parses `text` as a run and checks it. A parse failure yields a single
/// `PARSE_FAIL` finding and no run.
pub fn sanity_check_text(text: &str, topics: &[TopicRecord]) -> (Option<RunFile>, SanityReport) {
    match formats::parse_run_allow_empty(text.as_bytes()) {
        Ok(run) => {
            let report = sanity_check(&run, topics);
            (Some(run), report)
        }
        Err(e) => (
            None,
            SanityReport {
                findings: vec![Finding::new(FindingCode::ParseFail, None, e.to_string())],
                notes: Vec::new(),
            },
        ),
    }
}

/// How relevance grades become gains. Negative grades always gain 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gain {
    /// `2^rel - 1`
    Exponential,
    /// `rel`
    Linear,
}

impl Gain {
    pub fn of(self, grade: i32) -> f64 {
        if grade <= 0 {
            return 0.0;
        }
        match self {
            Gain::Exponential => 2f64.powi(grade) - 1.0,
            Gain::Linear => f64::from(grade),
        }
    }
}

/// A rank measure over one query. Identifiers: `nDCG@k` (exponential gain)
/// and `nDCG_lin@k` (linear gain), matched case-insensitively.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Measure {
    Ndcg { k: usize, gain: Gain },
}

impl Measure {
    pub fn ndcg(k: usize) -> Self {
        Measure::Ndcg {
            k,
            gain: Gain::Exponential,
        }
    }

    /// Value for one query given its score-ordered docnos and grades.
    pub fn compute(&self, ranking: &[&str], judgments: &HashMap<&str, i32>) -> f64 {
        match *self {
            Measure::Ndcg { k, gain } => ndcg_with(ranking, judgments, k, gain),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Ndcg { k, gain: Gain::Exponential } => write!(f, "nDCG@{k}"),
            Measure::Ndcg { k, gain: Gain::Linear } => write!(f, "nDCG_lin@{k}"),
        }
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown measure `{s}` (expected nDCG@k or nDCG_lin@k)"));
        let (name, k) = s.split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(Error::InvalidArgument("measure cutoff k must be ≥ 1".into()));
        }
        let gain = match name.to_ascii_lowercase().as_str() {
            "ndcg" => Gain::Exponential,
            "ndcg_lin" => Gain::Linear,
            _ => return Err(bad()),
        };
        Ok(Measure::Ndcg { k, gain })
    }
}

impl Serialize for Measure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Measure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// nDCG@k with `2^rel - 1` gain and `log2(rank + 1)` discount. `qrels` are
/// the judgments of one query; unjudged documents gain 0 and a query with no
/// positive-gain judgment scores 0.
pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], qrels: &[Qrel], k: usize) -> f64 {
    let judgments: HashMap<&str, i32> = qrels.iter().map(|q| (q.docno.as_str(), q.relevance)).collect();
    let ranking: Vec<&str> = ranking.iter().map(AsRef::as_ref).collect();
    ndcg_with(&ranking, &judgments, k, Gain::Exponential)
}

fn ndcg_with(ranking: &[&str], judgments: &HashMap<&str, i32>, k: usize, gain: Gain) -> f64 {
    let discount = |i: usize| ((i + 2) as f64).log2();
    let mut seen = HashSet::new();
    let dcg: f64 = ranking
        .iter()
        .filter(|d| seen.insert(**d))
        .take(k)
        .enumerate()
        .map(|(i, d)| judgments.get(d).map_or(0.0, |&g| gain.of(g)) / discount(i))
        .sum();
    let mut ideal: Vec<f64> = judgments.values().map(|&g| gain.of(g)).filter(|&g| g > 0.0).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, g)| g / discount(i)).sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

/// Docnos of one query's lines in evaluation order.
pub fn score_order<'a>(lines: &[&'a RunLine]) -> Vec<&'a str> {
    let mut sorted = lines.to_vec();
    sorted.sort_by(|a, b| match b.score.value().total_cmp(&a.score.value()) {
        Ordering::Equal => a.docno.cmp(&b.docno),
        o => o,
    });
    sorted.into_iter().map(|l| l.docno.as_str()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub measure: Measure,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    pub evaluated_query_count: usize,
}

/// Evaluates a run over every judged topic. Runs with NaN scores are refused
/// with the embedded [`SanityReport`].
pub fn evaluate(run: &RunFile, qrels: &[Qrel], measures: &[Measure]) -> Result<Vec<EvaluationReport>> {
    let blocking: Vec<Finding> = sanity_check(run, &[])
        .findings
        .into_iter()
        .filter(|f| f.severity == Severity::Error)
        .collect();
    if !blocking.is_empty() {
        return Err(Error::Sanity(SanityReport {
            findings: blocking,
            notes: Vec::new(),
        }));
    }
    let mut judged: BTreeMap<&str, HashMap<&str, i32>> = BTreeMap::new();
    for q in qrels {
        judged.entry(&q.topic).or_default().insert(&q.docno, q.relevance);
    }
    let rankings: HashMap<&str, Vec<&str>> = run
        .by_query()
        .into_iter()
        .map(|(qid, lines)| (qid, score_order(&lines)))
        .collect();
    Ok(measures
        .iter()
        .map(|m| {
            let per_query: BTreeMap<String, f64> = judged
                .iter()
                .map(|(qid, j)| {
                    let v = rankings.get(qid).map_or(0.0, |r| m.compute(r, j));
                    (qid.to_string(), v)
                })
                .collect();
            let n = per_query.len();
            let mean = if n == 0 {
                0.0
            } else {
                per_query.values().sum::<f64>() / n as f64
            };
            EvaluationReport {
                measure: *m,
                per_query,
                mean,
                evaluated_query_count: n,
            }
        })
        .collect())
}

/// Result of the full pipeline: sanity check against topics, then
/// evaluation against qrels.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub sanity: SanityReport,
    pub reports: Vec<EvaluationReport>,
}

pub fn check_and_evaluate(
    run: &RunFile,
    topics: &[TopicRecord],
    qrels: &[Qrel],
    measures: &[Measure],
) -> Result<Evaluation> {
    let mut sanity = sanity_check(run, topics);
    let judged: HashSet<&str> = qrels.iter().map(|q| q.topic.as_str()).collect();
    for qid in run.queries() {
        if !judged.contains(qid) {
            sanity.notes.push(format!("query {qid} has no relevance judgments"));
        }
    }
    if sanity.has_errors() {
        return Err(Error::Sanity(sanity));
    }
    let reports = evaluate(run, qrels, measures)?;
    Ok(Evaluation { sanity, reports })
}

#[derive(Serialize, Deserialize)]
struct ReportBody {
    mean: f64,
    per_query: BTreeMap<String, f64>,
    evaluated_query_count: usize,
}

/// `evaluation.json`: `{measure: {mean, per_query, evaluated_query_count}}`.
pub fn evaluation_json(reports: &[EvaluationReport]) -> Result<String> {
    let map: BTreeMap<String, ReportBody> = reports
        .iter()
        .map(|r| {
            (
                r.measure.to_string(),
                ReportBody {
                    mean: r.mean,
                    per_query: r.per_query.clone(),
                    evaluated_query_count: r.evaluated_query_count,
                },
            )
        })
        .collect();
    Ok(serde_json::to_string_pretty(&map)? + "\n")
}

pub fn parse_evaluation_json(text: &str) -> Result<Vec<EvaluationReport>> {
    let map: BTreeMap<String, ReportBody> = serde_json::from_str(text)?;
    map.into_iter()
        .map(|(m, b)| {
            Ok(EvaluationReport {
                measure: m.parse()?,
                per_query: b.per_query,
                mean: b.mean,
                evaluated_query_count: b.evaluated_query_count,
            })
        })
        .collect()
}

pub fn sanity_json(report: &SanityReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qrel(topic: &str, docno: &str, relevance: i32) -> Qrel {
        Qrel {
            topic: topic.into(),
            iteration: "0".into(),
            docno: docno.into(),
            relevance,
        }
    }

    fn topic(qid: &str) -> TopicRecord {
        TopicRecord {
            qid: qid.into(),
            query: format!("query {qid}"),
            original_topic: Default::default(),
        }
    }

    fn run(lines: &[(&str, &str, u32, f64)]) -> RunFile {
        RunFile::new(lines.iter().map(|&(q, d, r, s)| RunLine::new(q, d, r, s, "t")).collect()).unwrap()
    }

    #[test]
    fn worked_example() {
        let q = [qrel("q1", "d1", 2), qrel("q1", "d2", 1), qrel("q1", "d3", 0)];
        let v = ndcg_at_k(&["d3", "d1", "d2"], &q, 10);
        let expected = (3.0 / 3f64.log2() + 1.0 / 2.0) / (3.0 + 1.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.659).abs() < 1e-3);
    }

    #[test]
    fn identities() {
        let q = [qrel("q1", "a", 2), qrel("q1", "b", 1)];
        assert_eq!(ndcg_at_k(&["a", "b"], &q, 10), 1.0);
        assert_eq!(ndcg_at_k(&["x", "y"], &q, 10), 0.0);
        assert_eq!(ndcg_at_k(&["a"], &[qrel("q1", "a", 0)], 10), 0.0);
        assert_eq!(ndcg_at_k::<&str>(&[], &q, 10), 0.0);
        assert_eq!(ndcg_at_k(&["a"], &[qrel("q1", "a", -1), qrel("q1", "b", 1)], 10), 0.0);
    }

    #[test]
    fn measure_ids() {
        assert_eq!("ndcg@10".parse::<Measure>().unwrap(), Measure::ndcg(10));
        assert_eq!("nDCG@10".parse::<Measure>().unwrap().to_string(), "nDCG@10");
        assert_eq!("nDCG_lin@5".parse::<Measure>().unwrap().to_string(), "nDCG_lin@5");
        assert!("map".parse::<Measure>().is_err());
        assert!("ndcg@0".parse::<Measure>().is_err());
    }

    #[test]
    fn clean_run_has_no_findings() {
        let r = run(&[("q1", "a", 1, 3.0), ("q1", "b", 2, 2.0), ("q2", "a", 1, 1.0)]);
        assert!(sanity_check(&r, &[topic("q1"), topic("q2")]).is_clean());
    }

    #[test]
    fn each_code_fires() {
        let topics = [topic("q1"), topic("q2")];
        let ties = run(&[("q1", "d1", 1, 5.0), ("q1", "d2", 2, 5.0), ("q2", "d1", 1, 1.0)]);
        let r = sanity_check(&ties, &topics);
        assert_eq!(r.codes(), vec![FindingCode::ScoreTies]);
        assert_eq!(r.findings[0].qid.as_deref(), Some("q1"));

        let nan = run(&[("q1", "d1", 1, f64::NAN), ("q2", "d1", 1, 1.0)]);
        assert_eq!(sanity_check(&nan, &topics).codes(), vec![FindingCode::NanScore]);

        let empty = run(&[("q1", "d1", 1, 1.0)]);
        let r = sanity_check(&empty, &topics);
        assert_eq!(r.codes(), vec![FindingCode::EmptyResultSet]);
        assert_eq!(r.findings[0].qid.as_deref(), Some("q2"));

        let unknown = run(&[("q1", "d1", 1, 1.0), ("q2", "d1", 1, 1.0), ("q99", "d1", 1, 1.0)]);
        let r = sanity_check(&unknown, &topics);
        assert_eq!(r.codes(), vec![FindingCode::UnknownQuery]);
        assert_eq!(r.findings[0].qid.as_deref(), Some("q99"));

        let contra = run(&[("q1", "d1", 1, 1.0), ("q1", "d2", 2, 2.0), ("q2", "d1", 1, 1.0)]);
        assert_eq!(sanity_check(&contra, &topics).codes(), vec![FindingCode::RankScoreContradiction]);

        let (parsed, r) = sanity_check_text("q1 Q0 d1 one 1.0 t\n", &topics);
        assert!(parsed.is_none());
        assert_eq!(r.codes(), vec![FindingCode::ParseFail]);
        assert!(r.has_errors());
    }

    #[test]
    fn findings_are_not_short_circuited() {
        let r = run(&[("q1", "d1", 1, f64::NAN), ("q1", "d2", 2, 1.0), ("q1", "d3", 3, 1.0), ("q9", "x", 1, 0.0)]);
        let codes = sanity_check(&r, &[topic("q1"), topic("q2")]).codes();
        assert_eq!(
            codes,
            vec![
                FindingCode::ScoreTies,
                FindingCode::NanScore,
                FindingCode::EmptyResultSet,
                FindingCode::UnknownQuery
            ]
        );
    }

    #[test]
    fn evaluation_means_and_missing_topics() {
        let qrels = [qrel("q1", "a", 1), qrel("q2", "b", 1), qrel("q3", "c", 2)];
        let r = run(&[("q1", "a", 1, 2.0), ("q2", "x", 1, 1.0)]);
        let reps = evaluate(&r, &qrels, &[Measure::ndcg(10)]).unwrap();
        assert_eq!(reps[0].per_query["q1"], 1.0);
        assert_eq!(reps[0].per_query["q2"], 0.0);
        assert_eq!(reps[0].per_query["q3"], 0.0);
        assert_eq!(reps[0].evaluated_query_count, 3);
        assert!((reps[0].mean - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn evaluation_uses_score_order() {
        let qrels = [qrel("q1", "a", 1)];
        // ranks say b first, scores say a first
        let r = run(&[("q1", "b", 1, 1.0), ("q1", "a", 2, 2.0)]);
        assert_eq!(evaluate(&r, &qrels, &[Measure::ndcg(1)]).unwrap()[0].mean, 1.0);
        // tie broken by docno
        let r = run(&[("q1", "b", 1, 1.0), ("q1", "a", 2, 1.0)]);
        assert_eq!(evaluate(&r, &qrels, &[Measure::ndcg(1)]).unwrap()[0].mean, 1.0);
    }

    #[test]
    fn nan_run_is_refused() {
        let r = run(&[("q1", "a", 1, f64::NAN)]);
        match evaluate(&r, &[qrel("q1", "a", 1)], &[Measure::ndcg(10)]) {
            Err(Error::Sanity(rep)) => assert_eq!(rep.codes(), vec![FindingCode::NanScore]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unjudged_queries_become_notes() {
        let r = run(&[("q1", "a", 1, 1.0), ("q2", "a", 1, 1.0)]);
        let e = check_and_evaluate(&r, &[topic("q1"), topic("q2")], &[qrel("q1", "a", 1)], &[Measure::ndcg(10)])
            .unwrap();
        assert!(e.sanity.findings.is_empty());
        assert_eq!(e.sanity.notes, vec!["query q2 has no relevance judgments"]);
    }

    #[test]
    fn evaluation_json_roundtrip() {
        let r = run(&[("q1", "a", 1, 1.0)]);
        let reps = evaluate(&r, &[qrel("q1", "a", 1)], &[Measure::ndcg(10), "ndcg_lin@5".parse().unwrap()]).unwrap();
        let text = evaluation_json(&reps).unwrap();
        let mut back = parse_evaluation_json(&text).unwrap();
        back.sort_by_key(|r| r.measure.to_string());
        let mut orig = reps.clone();
        orig.sort_by_key(|r| r.measure.to_string());
        assert_eq!(back, orig);
    }
}
