//! Write → parse round trips over generated valid instances of every
//! interchange format, plus the canonical example rows.

mod common;

use common::strategies::*;
use irexp::formats::{self, Compression, Qrel};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn documents_round_trip(docs in documents(), c in compression()) {
        let bytes = formats::documents_to_bytes(&docs, c).unwrap();
        prop_assert_eq!(Compression::sniff(&bytes) == Compression::Gzip, c == Compression::Gzip);
        prop_assert_eq!(formats::parse_documents(&bytes[..], c).unwrap(), docs);
    }

    #[test]
    fn topics_round_trip(topics in topics(), c in compression()) {
        let bytes = formats::topics_to_bytes(&topics, c).unwrap();
        prop_assert_eq!(formats::parse_topics(&bytes[..], c).unwrap(), topics);
    }

    #[test]
    fn rerank_round_trip(rows in rerank(), c in compression()) {
        let bytes = formats::rerank_to_bytes(&rows, c).unwrap();
        prop_assert_eq!(formats::parse_rerank(&bytes[..], c).unwrap(), rows);
    }

    #[test]
    fn qrels_round_trip(qrels in qrels()) {
        let bytes = formats::qrels_to_bytes(&qrels).unwrap();
        prop_assert_eq!(formats::parse_qrels(&bytes[..]).unwrap(), qrels);
    }

    #[test]
    fn run_round_trip_is_byte_stable(run in run()) {
        let bytes = formats::run_to_bytes(&run).unwrap();
        let parsed = formats::parse_run(&bytes[..]).unwrap();
        prop_assert_eq!(&parsed, &run);
        for (a, b) in parsed.lines().iter().zip(run.lines()) {
            prop_assert_eq!(a.score.value().to_bits(), b.score.value().to_bits());
        }
        prop_assert_eq!(formats::run_to_bytes(&parsed).unwrap(), bytes);
    }
}

#[test]
fn example_document_row() {
    let row = r#"{"docno": "8182161", "text": "Goldfish can grow up to 18 inches ...", "original_document": {}}"#;
    let docs = formats::parse_documents(row.as_bytes(), Compression::None).unwrap();
    assert_eq!(docs.len(), 1);
    assert_eq!(docs[0].docno, "8182161");
    assert_eq!(docs[0].text, "Goldfish can grow up to 18 inches ...");
}

#[test]
fn example_topic_row() {
    let row = r#"{"qid": "156493", "query": "do goldfish grow", "original_query": {}}"#;
    let topics = formats::parse_topics(row.as_bytes(), Compression::None).unwrap();
    assert_eq!(topics[0].qid, "156493");
    assert_eq!(topics[0].query, "do goldfish grow");
}

#[test]
fn example_qrel_row() {
    let qrels = formats::parse_qrels("156493 Q0 8182161 2\n".as_bytes()).unwrap();
    assert_eq!(
        qrels,
        vec![Qrel {
            topic: "156493".into(),
            iteration: "Q0".into(),
            docno: "8182161".into(),
            relevance: 2
        }]
    );
}

#[test]
fn example_rerank_row_with_numeric_docno() {
    let row = r#"{"qid": "156493", "query": "do goldfish grow", "original_query": {}, "docno": 8182161, "text": "Goldfish can grow up to 18 inches ...", "original_document": {}, "rank": 1, "score": 31.16}"#;
    let rows = formats::parse_rerank(row.as_bytes(), Compression::None).unwrap();
    assert_eq!(rows[0].docno, "8182161");
    assert_eq!(rows[0].rank, 1);
    assert_eq!(rows[0].score, 31.16);
}
