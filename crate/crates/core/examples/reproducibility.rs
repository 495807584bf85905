//! Effect ratio and delta relative improvement: the worked example, then a
//! report over the toy approaches moved from one task to another.

use std::collections::BTreeMap;

use irexp::analytics;
use irexp::dataset_hub::NewDataset;
use irexp::evaluator::Measure;
use irexp::{toy, Platform, PlatformConfig};

fn main() -> irexp::Result<()> {
    let one = |v: f64| BTreeMap::from([("t".to_string(), v)]);
    let er = analytics::effect_ratio(&one(0.4), &one(0.6), &one(0.3), &one(0.4))?;
    let dri = analytics::delta_relative_improvement((0.4, 0.6), (0.3, 0.4));
    println!("0.4 -> 0.6 reproduced as 0.3 -> 0.4: ER {er:.4}, dRI {:.4}", dri.unwrap_or(f64::NAN));

    let tmp = tempfile::tempdir()?;
    let platform = Platform::open(PlatformConfig::new(tmp.path().join("store")))?;
    for (id, collection) in [("origin", toy::collection()), ("target", toy::variant())] {
        let files = collection.write_to(&tmp.path().join(id))?;
        platform.register_dataset(NewDataset::new(id, &files.documents, &files.topics).qrels(&files.qrels))?;
    }
    toy::define_pipelines(&mut platform.registry()?, &tmp.path().join("work"))?;
    for dataset in ["origin", "target"] {
        for approach in ["term-overlap", "length-penalty", "feature-ltr"] {
            platform.run_pipeline(&approach.into(), dataset, true)?;
        }
    }
    let reports = platform.repro("origin", &[], &Measure::ndcg(10))?;
    print!("{}", analytics::render_repro(&reports));
    Ok(())
}
