//! Generators of valid instances of every interchange format.

use std::collections::BTreeSet;

use irexp::formats::{Compression, DocumentRecord, OpaqueMap, Qrel, RerankEntry, RunFile, RunLine, Score, TopicRecord};
use proptest::prelude::*;
use serde_json::Value;

pub fn token() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_.:-]{1,12}"
}

pub fn free_text() -> impl Strategy<Value = String> {
    prop_oneof![".{0,40}", "(?s)[ -~\\t\\n\u{e9}\u{4e2d}\u{1f600}\"\\\\]{0,40}"]
}

pub fn opaque() -> impl Strategy<Value = OpaqueMap> {
    let value = prop_oneof![
        free_text().prop_map(Value::String),
        any::<i64>().prop_map(Value::from),
        (-1e12f64..1e12).prop_map(Value::from),
        any::<bool>().prop_map(Value::Bool),
        Just(Value::Null),
        prop::collection::vec(token().prop_map(Value::String), 0..3).prop_map(Value::Array),
    ];
    prop::collection::btree_map("[a-z_]{1,8}", value, 0..4).prop_map(|m| m.into_iter().collect())
}

pub fn compression() -> impl Strategy<Value = Compression> {
    prop_oneof![Just(Compression::None), Just(Compression::Gzip)]
}

pub fn documents() -> impl Strategy<Value = Vec<DocumentRecord>> {
    prop::collection::btree_set(token(), 0..8).prop_flat_map(|ids| {
        let n = ids.len();
        (Just(ids), prop::collection::vec((free_text(), opaque()), n)).prop_map(|(ids, bodies)| {
            ids.into_iter()
                .zip(bodies)
                .map(|(docno, (text, original_document))| DocumentRecord {
                    docno,
                    text,
                    original_document,
                })
                .collect()
        })
    })
}

pub fn topics() -> impl Strategy<Value = Vec<TopicRecord>> {
    prop::collection::btree_set(token(), 0..8).prop_flat_map(|ids| {
        let n = ids.len();
        (Just(ids), prop::collection::vec((free_text(), opaque()), n)).prop_map(|(ids, bodies)| {
            ids.into_iter()
                .zip(bodies)
                .map(|(qid, (query, original_topic))| TopicRecord {
                    qid,
                    query,
                    original_topic,
                })
                .collect()
        })
    })
}

/// Per query: distinct docnos, ranks 1..=n, scores non-increasing with rank.
pub fn rerank() -> impl Strategy<Value = Vec<RerankEntry>> {
    let query = (token(), free_text(), opaque(), prop::collection::btree_set(token(), 1..5)).prop_flat_map(
        |(qid, query, topic, docs)| {
            let n = docs.len();
            (
                Just((qid, query, topic, docs)),
                prop::collection::vec((free_text(), opaque(), -1e6f64..1e6), n),
            )
        },
    );
    prop::collection::vec(query, 0..4).prop_map(|queries| {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for ((qid, query, topic, docs), mut rows) in queries {
            if !seen.insert(qid.clone()) {
                continue;
            }
            rows.sort_by(|a, b| b.2.total_cmp(&a.2));
            for (i, (docno, (text, original_document, score))) in docs.into_iter().zip(rows).enumerate() {
                out.push(RerankEntry {
                    qid: qid.clone(),
                    query: query.clone(),
                    original_topic: topic.clone(),
                    docno,
                    text,
                    original_document,
                    rank: i as u32 + 1,
                    score,
                });
            }
        }
        out
    })
}

pub fn qrels() -> impl Strategy<Value = Vec<Qrel>> {
    prop::collection::btree_map((token(), token()), (token(), -1i32..=4), 0..20).prop_map(|m| {
        m.into_iter()
            .map(|((topic, docno), (iteration, relevance))| Qrel {
                topic,
                iteration,
                docno,
                relevance,
            })
            .collect()
    })
}

pub fn score() -> impl Strategy<Value = Score> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Score::from_value),
        "-?[0-9]{1,4}\\.[0-9]{1,8}(e-?[0-9]{1,2})?".prop_map(|s| Score::parse(&s).expect("decimal")),
    ]
}

/// Distinct pairs, per-query ranks 1..=n, a single tag; line order shuffled.
pub fn run() -> impl Strategy<Value = RunFile> {
    (
        token(),
        prop::collection::btree_map(token(), prop::collection::btree_set(token(), 1..6), 1..5),
    )
        .prop_flat_map(|(tag, queries)| {
            let total: usize = queries.values().map(BTreeSet::len).sum();
            (Just((tag, queries)), prop::collection::vec(score(), total)).prop_flat_map(|((tag, queries), scores)| {
                let mut lines = Vec::new();
                let mut s = scores.into_iter();
                for (qid, docs) in &queries {
                    for (i, docno) in docs.iter().enumerate() {
                        lines.push(RunLine::new(qid, docno, i as u32 + 1, s.next().expect("sized"), &tag));
                    }
                }
                Just(lines).prop_shuffle()
            })
        })
        .prop_map(|lines| RunFile::new(lines).expect("valid by construction"))
}
