//! Exports a task with a confidential test set, imports it into a fresh store
//! and replays one approach from the archive.

use irexp::archive::{self, ExportOptions};
use irexp::dataset_hub::{AccessRole, NewDataset};
use irexp::{toy, Platform, PlatformConfig};

fn main() -> irexp::Result<()> {
    let tmp = tempfile::tempdir()?;
    let platform = Platform::open(PlatformConfig::new(tmp.path().join("organizer")))?;
    for (id, collection, confidential) in [("train", toy::collection(), false), ("test", toy::variant(), true)] {
        let files = collection.write_to(&tmp.path().join(id))?;
        platform.register_dataset(
            NewDataset::new(id, &files.documents, &files.topics)
                .qrels(&files.qrels)
                .confidential(confidential),
        )?;
    }
    toy::define_pipelines(&mut platform.registry()?, &tmp.path().join("work"))?;
    for dataset in ["train", "test"] {
        platform.run_pipeline(&"length-penalty".into(), dataset, true)?;
    }

    let dest = tmp.path().join("toy-task-archive");
    let manifest = archive::export_archive(&platform, &dest, &ExportOptions::new("toy-task", AccessRole::Participant))?;
    println!("exported {} files, content digest {}", manifest.files.len(), manifest.content_digest);
    for d in &manifest.datasets {
        println!("  dataset {:<6} content included: {}", d.id, d.content_included);
    }

    let fresh = Platform::open(PlatformConfig::new(tmp.path().join("reader")))?;
    let summary = archive::import_archive(&fresh, &dest)?;
    println!("imported {} runs; withheld datasets: {:?}", summary.runs_imported, summary.datasets_withheld);

    let replay = archive::replay(&fresh, Some(&dest), "length-penalty", "train")?;
    println!("replay on train reproduced the archived output: {:?}", replay.reproduced());
    match archive::replay(&fresh, Some(&dest), "length-penalty", "test") {
        Err(e) => println!("replay on test: {e}"),
        Ok(_) => println!("replay on test unexpectedly succeeded"),
    }
    Ok(())
}
