//! Parses the canonical rows of each interchange format and writes them back.

use irexp::formats::{self, Compression, RunFile, RunLine, Score};

fn main() -> irexp::Result<()> {
    let doc = r#"{"docno": "8182161", "text": "Goldfish can grow up to 18 inches ...", "original_document": {"url": "x"}}"#;
    let docs = formats::parse_documents(doc.as_bytes(), Compression::None)?;
    println!("document {} -> {:?}", docs[0].docno, docs[0].text);

    let rerank = r#"{"qid": "156493", "query": "do goldfish grow", "original_query": {}, "docno": 8182161, "text": "Goldfish can grow up to 18 inches ...", "original_document": {}, "rank": 1, "score": 31.16}"#;
    let rows = formats::parse_rerank(rerank.as_bytes(), Compression::None)?;
    println!("re-rank row: numeric docno read as {:?}, score {}", rows[0].docno, rows[0].score);

    let qrels = formats::parse_qrels("156493 Q0 8182161 2\n".as_bytes())?;
    print!("qrels written back: {}", String::from_utf8_lossy(&formats::qrels_to_bytes(&qrels)?));

    // scores keep their original spelling on a round trip
    let run = RunFile::new(vec![
        RunLine::new("156493", "8182161", 1, Score::parse("31.160").expect("decimal"), "demo"),
        RunLine::new("156493", "1234", 2, Score::from_value(1e-7), "demo"),
    ])?;
    let bytes = formats::run_to_bytes(&run)?;
    print!("run:\n{}", String::from_utf8_lossy(&bytes));
    assert_eq!(formats::run_to_bytes(&formats::parse_run(&bytes[..])?)?, bytes);

    let gz = formats::documents_to_bytes(&docs, Compression::Gzip)?;
    assert_eq!(formats::parse_documents(&gz[..], Compression::sniff(&gz))?, docs);
    println!("gzip documents: {} bytes, round trip ok", gz.len());
    Ok(())
}
