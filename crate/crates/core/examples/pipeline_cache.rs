//! Runs the toy pipelines twice and adds a second re-ranker: only nodes whose
//! inputs changed are executed.

use std::sync::Arc;

use irexp::dataset_hub::NewDataset;
use irexp::executor::{ContainerBackend, MockBackend};
use irexp::fixtures::FIXTURE_IMAGE;
use irexp::registry::ComponentKind;
use irexp::{toy, Platform, PlatformConfig};

fn run(platform: &Platform, terminal: &str) -> irexp::Result<()> {
    let run = platform.run_pipeline(&terminal.into(), "toy", true)?;
    let states: Vec<String> = run
        .report
        .nodes
        .iter()
        .map(|n| format!("{}={}", n.node, n.state.as_str()))
        .collect();
    println!("{terminal:<16} launches={} [{}]", run.report.launches(), states.join(", "));
    Ok(())
}

fn main() -> irexp::Result<()> {
    let tmp = tempfile::tempdir()?;
    let backend = Arc::new(MockBackend::with_fixtures());
    let platform = Platform::with_backend(PlatformConfig::new(tmp.path().join("store")), backend.clone());
    let files = toy::collection().write_to(&tmp.path().join("src"))?;
    platform.register_dataset(NewDataset::new("toy", &files.documents, &files.topics).qrels(&files.qrels))?;
    toy::define_pipelines(&mut platform.registry()?, &tmp.path().join("work"))?;

    run(&platform, "length-penalty")?;
    run(&platform, "feature-ltr")?;
    run(&platform, "length-penalty")?;

    platform.registry()?.add_component(
        "strong-penalty",
        FIXTURE_IMAGE,
        "irexp fixture length-penalty --lambda 2.0 --tag strong-penalty",
        &["term-overlap".into()],
        ComponentKind::ReRank,
    )?;
    run(&platform, "strong-penalty")?;
    println!("containers launched in total: {}", backend.launches());
    Ok(())
}
