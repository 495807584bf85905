//! Runs every toy approach on two tasks of the same corpus and prints the
//! macro-averaged leaderboard.

use irexp::analytics;
use irexp::dataset_hub::NewDataset;
use irexp::evaluator::Measure;
use irexp::{toy, Platform, PlatformConfig};

fn main() -> irexp::Result<()> {
    let tmp = tempfile::tempdir()?;
    let platform = Platform::open(PlatformConfig::new(tmp.path().join("store")))?;
    for (id, collection) in [("toy-2024", toy::collection()), ("toy-2025", toy::variant())] {
        let files = collection.write_to(&tmp.path().join(id))?;
        platform.register_dataset(
            NewDataset::new(id, &files.documents, &files.topics)
                .qrels(&files.qrels)
                .corpus("toy"),
        )?;
    }
    toy::define_pipelines(&mut platform.registry()?, &tmp.path().join("work"))?;
    for dataset in ["toy-2024", "toy-2025"] {
        for approach in ["term-overlap", "length-penalty", "feature-ltr"] {
            platform.run_pipeline(&approach.into(), dataset, true)?;
        }
    }
    // a manual submission only on one task: listed, but incomplete
    let manual = "1 Q0 toy-d001 1 1.0 manual\n";
    platform.submit_run("manual", "toy-2024", manual)?;

    let board = platform.leaderboard(&Measure::ndcg(10))?;
    print!("{}", analytics::render_leaderboard(&board, "nDCG@10"));
    Ok(())
}
