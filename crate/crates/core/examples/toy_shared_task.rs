//! The whole toy shared task through the command-line entry point: register,
//! define components, run, evaluate and rank.

use irexp::cli;

fn irexp(store: &std::path::Path, args: &[&str]) -> i32 {
    println!("$ irexp {}", args.join(" "));
    let mut argv = vec!["irexp".into(), "--store".into(), store.as_os_str().to_owned()];
    argv.extend(args.iter().map(|a| a.into()));
    cli::main_with_args(argv)
}

fn main() -> irexp::Result<()> {
    let tmp = tempfile::tempdir()?;
    let store = tmp.path().join("store");
    let files = irexp::toy::collection().write_to(&tmp.path().join("src"))?;
    let (docs, topics, qrels) = (
        files.documents.to_string_lossy().into_owned(),
        files.topics.to_string_lossy().into_owned(),
        files.qrels.to_string_lossy().into_owned(),
    );
    let image = irexp::fixtures::FIXTURE_IMAGE;
    let steps: Vec<Vec<&str>> = vec![
        vec!["dataset", "register", "--id", "toy", "--docs", &docs, "--topics", &topics, "--qrels", &qrels],
        vec!["component", "add", "--id", "index", "--image", image, "--command", "irexp fixture index-corpus", "--kind", "generic"],
        vec![
            "component", "add", "--id", "bm-lite", "--image", image, "--command",
            "irexp fixture term-overlap --index $inputRun", "--predecessor", "index",
        ],
        vec![
            "component", "add", "--id", "short-first", "--image", image, "--command",
            "irexp fixture length-penalty --lambda 0.5", "--predecessor", "bm-lite", "--kind", "re-rank",
        ],
        vec!["pipeline", "run", "--terminal", "bm-lite", "--dataset", "toy"],
        vec!["pipeline", "run", "--terminal", "short-first", "--dataset", "toy"],
        vec!["leaderboard"],
    ];
    for step in steps {
        let code = irexp(&store, &step);
        if code != 0 {
            eprintln!("exit status {code}");
            std::process::exit(code);
        }
    }
    Ok(())
}
