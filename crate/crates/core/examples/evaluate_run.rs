//! Evaluates a hand-written run and shows the sanity findings of broken ones.

use irexp::dataset_hub::NewDataset;
use irexp::evaluator::{self, Measure};
use irexp::{toy, Platform, PlatformConfig};

fn main() -> irexp::Result<()> {
    let tmp = tempfile::tempdir()?;
    let platform = Platform::open(PlatformConfig::new(tmp.path().join("store")))?;
    let collection = toy::collection();
    let files = collection.write_to(&tmp.path().join("src"))?;
    platform.register_dataset(NewDataset::new("toy", &files.documents, &files.topics).qrels(&files.qrels))?;

    // the judged documents of topic 1, best grade first, then a tie
    let mut judged: Vec<_> = collection.qrels.iter().filter(|q| q.topic == "1").collect();
    judged.sort_by_key(|q| std::cmp::Reverse(q.relevance));
    let mut run = String::new();
    for (i, q) in judged.iter().enumerate() {
        run.push_str(&format!("1 Q0 {} {} {} manual\n", q.docno, i + 1, 10 - i.min(8)));
    }
    let evaluation = platform.evaluate(&run, "toy", &[Measure::ndcg(10), Measure::ndcg(3)])?;
    for r in &evaluation.reports {
        println!("{} = {:.4} (topic 1: {:.4})", r.measure, r.mean, r.per_query["1"]);
    }
    // the other nine topics were left empty: a warning, not a refusal
    println!(
        "warnings: {} ({} findings)",
        evaluation.sanity.codes().iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", "),
        evaluation.sanity.findings.len()
    );

    let topics = collection.topics;
    for bad in ["1 Q0 toy-d001 1 NaN x\n", "1 Q0 toy-d001 1\n", "42 Q0 toy-d001 1 3.5 x\n"] {
        let (_, report) = evaluator::sanity_check_text(bad, &topics);
        let codes: Vec<&str> = report.codes().iter().map(|c| c.as_str()).collect();
        println!("{:?} -> {}", bad.trim(), codes.join(", "));
    }
    Ok(())
}
