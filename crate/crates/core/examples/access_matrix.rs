//! Prints the download matrix of a public and a confidential dataset, then
//! lifts one denial with an organizer grant.

use irexp::dataset_hub::{AccessGrant, AccessRole, NewDataset, Resource};
use irexp::{toy, Platform, PlatformConfig};

fn matrix(platform: &Platform, dataset: &str) {
    println!("{dataset}:");
    for role in AccessRole::ALL {
        let cells: Vec<String> = Resource::ALL
            .iter()
            .map(|&r| match platform.fetch(dataset, r, role) {
                Ok(_) => format!("{r}=yes"),
                Err(irexp::Error::Denied(d)) if d.liftable => format!("{r}=no(grantable)"),
                Err(_) => format!("{r}=no"),
            })
            .collect();
        println!("  {:<13} {}", role.as_str(), cells.join("  "));
    }
}

fn main() -> irexp::Result<()> {
    let tmp = tempfile::tempdir()?;
    let platform = Platform::open(PlatformConfig::new(tmp.path().join("store")))?;
    let files = toy::collection().write_to(&tmp.path().join("src"))?;
    for (id, confidential) in [("public", false), ("blind", true)] {
        platform.register_dataset(
            NewDataset::new(id, &files.documents, &files.topics)
                .qrels(&files.qrels)
                .confidential(confidential),
        )?;
        matrix(&platform, id);
    }

    let grant = AccessGrant {
        dataset_id: "public".into(),
        resource: Resource::Qrels,
        role: AccessRole::Participant,
        granted: true,
    };
    if let Err(e) = platform.grant(AccessRole::Participant, grant.clone()) {
        println!("participant tries to grant: {e}");
    }
    platform.grant(AccessRole::Organizer, grant)?;
    println!("after the organizer grants qrels to participants:");
    matrix(&platform, "public");
    Ok(())
}
