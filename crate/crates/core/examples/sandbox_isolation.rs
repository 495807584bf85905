//! A component that tries to escape its sandbox: every attempt is refused and
//! the run is marked failed, leaving the dataset untouched.

use irexp::dataset_hub::NewDataset;
use irexp::digest::Digest;
use irexp::fixtures::FIXTURE_IMAGE;
use irexp::registry::ComponentKind;
use irexp::{toy, Platform, PlatformConfig};

fn main() -> irexp::Result<()> {
    let tmp = tempfile::tempdir()?;
    let platform = Platform::open(PlatformConfig::new(tmp.path().join("store")))?;
    let files = toy::collection().write_to(&tmp.path().join("src"))?;
    platform.register_dataset(NewDataset::new("toy", &files.documents, &files.topics))?;
    let before = Digest::of_tree(&platform.hub().datasets_dir())?;

    platform.registry()?.add_component(
        "network-probe",
        FIXTURE_IMAGE,
        "irexp fixture network-probe",
        &[],
        ComponentKind::Generic,
    )?;
    let run = platform.run_pipeline(&"network-probe".into(), "toy", true)?;
    let node = &run.report.nodes[0];
    println!("state: {}", node.state.as_str());
    for v in &node.violations {
        println!("refused: {v}");
    }
    let after = Digest::of_tree(&platform.hub().datasets_dir())?;
    println!("dataset store unchanged: {}", before == after);
    Ok(())
}
