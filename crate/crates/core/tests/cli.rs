//! Drives the `irexp` binary end to end against a temporary store.

use std::path::Path;
use std::process::{Command, Output};

use irexp::digest::Digest;
use irexp::toy;
use serde_json::Value;

fn irexp(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irexp"))
        .arg("--store")
        .arg(store)
        .args(args)
        .env_remove("IREXP_STORE")
        .output()
        .expect("binary runs")
}

fn ok(store: &Path, args: &[&str]) -> String {
    let out = irexp(store, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Store with the toy dataset and the index → term-overlap → length-penalty
/// pipeline registered through the CLI.
fn setup() -> (tempfile::TempDir, std::path::PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    let files = toy::collection().write_to(&tmp.path().join("src")).unwrap();
    ok(
        &store,
        &[
            "dataset",
            "register",
            "--id",
            "toy",
            "--docs",
            files.documents.to_str().unwrap(),
            "--topics",
            files.topics.to_str().unwrap(),
            "--qrels",
            files.qrels.to_str().unwrap(),
        ],
    );
    let image = irexp::fixtures::FIXTURE_IMAGE;
    for (id, command, pred, kind) in [
        ("index-corpus", "irexp fixture index-corpus", None, "generic"),
        ("term-overlap", "irexp fixture term-overlap --index $inputRun", Some("index-corpus"), "full-rank"),
        ("length-penalty", "irexp fixture length-penalty --lambda 0.5", Some("term-overlap"), "re-rank"),
    ] {
        let mut args = vec!["component", "add", "--id", id, "--image", image, "--command", command, "--kind", kind];
        if let Some(p) = pred {
            args.extend(["--predecessor", p]);
        }
        ok(&store, &args);
    }
    (tmp, store)
}

#[test]
fn second_pipeline_run_is_all_cache_hits() {
    let (_tmp, store) = setup();
    let first = ok(&store, &["pipeline", "run", "--terminal", "length-penalty", "--dataset", "toy"]);
    assert_eq!(first.matches(" executed").count(), 3, "{first}");
    let second = ok(&store, &["pipeline", "run", "--terminal", "length-penalty", "--dataset", "toy"]);
    assert_eq!(second.matches("cache hit").count(), 3, "{second}");
    let digest = |t: &str| t.lines().find(|l| l.starts_with("output ")).map(str::to_string);
    assert_eq!(digest(&first), digest(&second));

    let json: Value = serde_json::from_str(&ok(
        &store,
        &["--json", "pipeline", "run", "--terminal", "length-penalty", "--dataset", "toy"],
    ))
    .unwrap();
    assert_eq!(json["launches"], 0);
    assert_eq!(json["succeeded"], true);
}

#[test]
fn nan_run_is_refused_with_findings() {
    let (tmp, store) = setup();
    let run = tmp.path().join("bad.txt");
    std::fs::write(&run, "1 Q0 toy-d001 1 NaN bad\n1 Q0 toy-d002 2 1.0 bad\n").unwrap();
    let out = irexp(&store, &["evaluate", "--run", run.to_str().unwrap(), "--dataset", "toy", "--submit", "bad"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["details"]["findings"][0]["code"], "NAN_SCORE");
    let board = ok(&store, &["--json", "leaderboard"]);
    assert!(!board.contains("\"bad\""), "{board}");
}

#[test]
fn warnings_are_reported_but_do_not_block() {
    let (tmp, store) = setup();
    let run = tmp.path().join("tied.txt");
    std::fs::write(&run, "1 Q0 toy-d001 1 2.0 tied\n1 Q0 toy-d002 2 2.0 tied\n").unwrap();
    let out = irexp(&store, &["evaluate", "--run", run.to_str().unwrap(), "--dataset", "toy"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SCORE_TIES"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("nDCG@10"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(irexp(tmp.path(), &["dataset", "register", "--bogus"]).status.code(), Some(2));
    assert_eq!(irexp(tmp.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn participants_cannot_fetch_qrels() {
    let (_tmp, store) = setup();
    let out = irexp(&store, &["--role", "participant", "dataset", "fetch", "--dataset", "toy", "--resource", "qrels"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["details"]["liftable"], true);
    ok(&store, &["--role", "organizer", "dataset", "fetch", "--dataset", "toy", "--resource", "qrels"]);
}

#[test]
fn read_only_commands_leave_the_store_untouched() {
    let (_tmp, store) = setup();
    ok(&store, &["pipeline", "run", "--terminal", "length-penalty", "--dataset", "toy"]);
    let before = Digest::of_tree(&store).unwrap();
    ok(&store, &["component", "list"]);
    ok(&store, &["pipeline", "resolve", "--terminal", "length-penalty"]);
    ok(&store, &["leaderboard"]);
    ok(&store, &["--json", "leaderboard"]);
    assert_eq!(Digest::of_tree(&store).unwrap(), before);
}

#[test]
fn archive_round_trip_through_the_cli() {
    let (tmp, store) = setup();
    ok(&store, &["pipeline", "run", "--terminal", "length-penalty", "--dataset", "toy"]);
    let archive = tmp.path().join("archive");
    ok(&store, &["archive", "export", "--dest", archive.to_str().unwrap(), "--task-id", "toy-task"]);
    let other = tmp.path().join("other");
    ok(&other, &["archive", "import", archive.to_str().unwrap()]);
    let replay = ok(
        &other,
        &["archive", "replay", "--approach", "length-penalty", "--dataset", "toy"],
    );
    assert!(replay.contains("output identical to the archived run"), "{replay}");
    assert_eq!(
        ok(&store, &["--json", "leaderboard"]),
        ok(&other, &["--json", "leaderboard"])
    );
}
