//! The `irexp` command line. Each subcommand maps onto one module operation;
//! this file only parses arguments, supplies the role and formats output.
//!
//! Exit codes: 0 success, 1 domain error (a JSON error object is written to
//! standard error), 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::analytics;
use crate::archive::{self, ExportOptions};
use crate::dataset_hub::{AccessGrant, AccessRole, DefaultTextRule, DefaultTextRules, NewDataset, Resource};
use crate::digest::Digest;
use crate::error::{Error, IoContext, Result};
use crate::evaluator::{self, Measure};
use crate::executor::sandbox::HostSandbox;
use crate::fixtures;
use crate::formats;
use crate::platform::{BackendKind, Platform, PlatformConfig};
use crate::registry::{ComponentKind, Node, NodeRef, NodeSpec};

#[derive(Debug, Parser)]
#[command(name = "irexp", version, about = "Reproducible shared-task retrieval experiments")]
pub struct Cli {
    /// Store directory.
    #[arg(long, env = "IREXP_STORE", default_value = ".irexp", global = true)]
    pub store: PathBuf,
    /// Acting role; defaults to the store's configured role.
    #[arg(long, global = true)]
    pub role: Option<AccessRole>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Container backend, overriding the store configuration.
    #[arg(long, global = true)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register, grant access to and download datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Define, revise, delete and list software components.
    #[command(subcommand)]
    Component(ComponentCmd),
    /// Upload static artifacts that act as pipeline inputs.
    #[command(subcommand)]
    Upload(UploadCmd),
    /// Resolve and execute pipelines.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Sanity-check and evaluate a run file against a dataset's qrels.
    Evaluate(EvaluateArgs),
    /// Per-corpus leaderboard over all recorded runs.
    Leaderboard(MeasureArg),
    /// Reproducibility of system preferences from one task on others.
    Repro(ReproArgs),
    /// Export, import and replay self-contained archives.
    #[command(subcommand)]
    Archive(ArchiveCmd),
    /// Runs a bundled fixture in the current process (container entrypoint).
    #[command(hide = true)]
    Fixture {
        name: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    Register {
        #[arg(long)]
        id: String,
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        topics: PathBuf,
        #[arg(long)]
        qrels: Option<PathBuf>,
        /// Blind dataset: content readable only inside the sandbox.
        #[arg(long)]
        confidential: bool,
        /// Corpus label for leaderboard macro-averaging.
        #[arg(long)]
        corpus: Option<String>,
        /// Raw document fields joined into `text`.
        #[arg(long, value_delimiter = ',')]
        doc_fields: Vec<String>,
        /// Raw topic fields joined into `query`.
        #[arg(long, value_delimiter = ',')]
        topic_fields: Vec<String>,
        #[arg(long, default_value = " ")]
        joiner: String,
    },
    Grant {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        resource: Resource,
        /// Role whose access changes.
        #[arg(long = "for")]
        for_role: AccessRole,
        #[arg(long)]
        revoke: bool,
    },
    Fetch {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        resource: Resource,
        /// Copy the file here instead of printing its path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ComponentCmd {
    Add {
        #[arg(long)]
        id: String,
        #[arg(long)]
        image: String,
        #[arg(long)]
        command: String,
        /// `id` (latest version) or `id@version`; repeatable, order matters.
        #[arg(long = "predecessor")]
        predecessors: Vec<NodeSpec>,
        #[arg(long, default_value = "full-rank")]
        kind: ComponentKind,
    },
    Revise {
        #[arg(long)]
        id: String,
        #[arg(long)]
        image: Option<String>,
        #[arg(long)]
        command: Option<String>,
    },
    Delete {
        node: NodeRef,
    },
    List {
        /// Include deleted nodes.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum UploadCmd {
    Add {
        #[arg(long)]
        id: String,
        #[arg(long = "file", required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value = "")]
        description: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    Resolve {
        #[arg(long)]
        terminal: NodeSpec,
    },
    Run {
        #[arg(long)]
        terminal: NodeSpec,
        #[arg(long)]
        dataset: String,
        /// Execute every node afresh without touching the cache.
        #[arg(long)]
        no_cache: bool,
    },
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub dataset: String,
    #[arg(long = "measure", default_value = "nDCG@10")]
    pub measures: Vec<Measure>,
    /// Record the run under this approach name.
    #[arg(long)]
    pub submit: Option<String>,
}

#[derive(Debug, Args)]
pub struct MeasureArg {
    #[arg(long, default_value = "nDCG@10")]
    pub measure: Measure,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    #[arg(long)]
    pub origin: String,
    /// Target tasks; every other evaluated task when omitted.
    #[arg(long = "target")]
    pub targets: Vec<String>,
    #[arg(long, default_value = "nDCG@10")]
    pub measure: Measure,
}

#[derive(Debug, Subcommand)]
pub enum ArchiveCmd {
    Export {
        #[arg(long)]
        dest: PathBuf,
        #[arg(long)]
        task_id: String,
        /// Restrict to these datasets (repeatable).
        #[arg(long = "dataset")]
        datasets: Vec<String>,
        #[arg(long)]
        include_test_data: bool,
        /// Publish only the scores of runs on confidential datasets.
        #[arg(long)]
        withhold_runs: bool,
        #[arg(long)]
        embed_images: bool,
    },
    Import {
        path: PathBuf,
    },
    Replay {
        #[arg(long)]
        approach: String,
        #[arg(long)]
        dataset: String,
        /// Import this archive first.
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    FetchRun {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        approach: String,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("IREXP_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}

/// The machine-readable error object written to standard error.
pub fn error_json(e: &Error) -> Value {
    let mut obj = json!({"error": {"code": e.code(), "message": e.to_string()}});
    let details = match e {
        Error::Sanity(report) => serde_json::to_value(report).ok(),
        Error::Denied(d) => serde_json::to_value(d).ok(),
        Error::Referenced { referenced_by, .. } => Some(json!({"referenced_by": referenced_by})),
        _ => None,
    };
    if let Some(d) = details {
        obj["error"]["details"] = d;
    }
    obj
}

struct Ctx<'a> {
    json: bool,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    /// Prints `value` as JSON in `--json` mode, `text` otherwise.
    fn emit(&mut self, value: Value, text: impl FnOnce() -> String) -> Result<()> {
        if self.json {
            writeln!(self.out, "{}", serde_json::to_string_pretty(&value)?)?;
        } else {
            let t = text();
            write!(self.out, "{t}")?;
            if !t.ends_with('\n') {
                writeln!(self.out)?;
            }
        }
        Ok(())
    }
}

/// Runs a parsed command; returns the exit code for non-error outcomes.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    if let Command::Fixture { name, args } = &cli.command {
        let mut all = vec!["fixture".to_string(), name.clone()];
        all.extend(args.iter().cloned());
        return Ok(fixtures::run(name, &mut HostSandbox::new(all), args));
    }
    let mut config = PlatformConfig::load(&cli.store)?;
    if let Some(b) = cli.backend {
        config.backend = b;
    }
    if let Some(p) = cli.parallelism {
        config.parallelism = p;
    }
    let role = cli.role.unwrap_or(config.default_role);
    let platform = Platform::open(config)?;
    let mut ctx = Ctx { json: cli.json, out };
    match cli.command {
        Command::Dataset(cmd) => dataset(&platform, role, cmd, &mut ctx),
        Command::Component(cmd) => component(&platform, cmd, &mut ctx),
        Command::Upload(UploadCmd::Add { id, files, description }) => {
            let u = platform.registry()?.add_upload(&id, &files, &description)?;
            ctx.emit(serde_json::to_value(&u)?, || {
                format!("{}@{} {}", u.upload_id, u.version, u.payload_digest)
            })?;
            Ok(0)
        }
        Command::Pipeline(cmd) => pipeline(&platform, cmd, &mut ctx),
        Command::Evaluate(args) => evaluate(&platform, args, &mut ctx),
        Command::Leaderboard(MeasureArg { measure }) => {
            let board = platform.leaderboard(&measure)?;
            ctx.emit(serde_json::to_value(&board)?, || {
                analytics::render_leaderboard(&board, &measure.to_string())
            })?;
            Ok(0)
        }
        Command::Repro(args) => {
            let reports = platform.repro(&args.origin, &args.targets, &args.measure)?;
            let value: Value = serde_json::from_str(&analytics::repro_json(&reports)?)?;
            ctx.emit(value, || {
                let mut t = analytics::render_repro(&reports);
                for r in &reports {
                    for n in &r.notices {
                        t.push_str(&format!("note: {n}\n"));
                    }
                }
                t
            })?;
            Ok(0)
        }
        Command::Archive(cmd) => archive_cmd(&platform, role, cmd, &mut ctx),
        Command::Fixture { .. } => unreachable!("handled above"),
    }
}

fn dataset(platform: &Platform, role: AccessRole, cmd: DatasetCmd, ctx: &mut Ctx<'_>) -> Result<i32> {
    match cmd {
        DatasetCmd::Register {
            id,
            docs,
            topics,
            qrels,
            confidential,
            corpus,
            doc_fields,
            topic_fields,
            joiner,
        } => {
            let rule = |fields: Vec<String>| -> Result<Option<DefaultTextRule>> {
                if fields.is_empty() {
                    Ok(None)
                } else {
                    Ok(Some(DefaultTextRule::new(fields)?.with_joiner(&joiner)))
                }
            };
            let mut new = NewDataset::new(&id, docs, topics).confidential(confidential).rules(DefaultTextRules {
                documents: rule(doc_fields)?,
                topics: rule(topic_fields)?,
            });
            if let Some(q) = qrels {
                new = new.qrels(q);
            }
            if let Some(c) = &corpus {
                new = new.corpus(c);
            }
            let ds = platform.register_dataset(new)?;
            let digest = ds.digest();
            ctx.emit(
                json!({"id": ds.id(), "digest": digest, "meta": ds.meta()}),
                || format!("{} {digest}", ds.id()),
            )?;
        }
        DatasetCmd::Grant {
            dataset,
            resource,
            for_role,
            revoke,
        } => {
            let grant = AccessGrant {
                dataset_id: dataset,
                resource,
                role: for_role,
                granted: !revoke,
            };
            platform.grant(role, grant.clone())?;
            ctx.emit(serde_json::to_value(&grant)?, || {
                format!(
                    "{} {} {resource} of {}",
                    if revoke { "revoked" } else { "granted" },
                    for_role,
                    grant.dataset_id
                )
            })?;
        }
        DatasetCmd::Fetch {
            dataset,
            resource,
            output,
        } => {
            let path = platform.fetch(&dataset, resource, role)?;
            if let Some(dest) = &output {
                if path.is_dir() {
                    return Err(Error::InvalidArgument(format!(
                        "{resource} of `{dataset}` is a directory of materialized files: {}",
                        path.display()
                    )));
                }
                fs::copy(&path, dest).at(dest)?;
            }
            let shown = output.unwrap_or(path);
            ctx.emit(json!({"path": shown}), || shown.display().to_string())?;
        }
    }
    Ok(0)
}

fn component(platform: &Platform, cmd: ComponentCmd, ctx: &mut Ctx<'_>) -> Result<i32> {
    let mut registry = platform.registry()?;
    match cmd {
        ComponentCmd::Add {
            id,
            image,
            command,
            predecessors,
            kind,
        } => {
            let c = registry.add_component(&id, &image, &command, &predecessors, kind)?;
            ctx.emit(serde_json::to_value(&c)?, || format!("{}@{}", c.component_id, c.version))?;
        }
        ComponentCmd::Revise { id, image, command } => {
            let c = registry.revise_component(&id, image.as_deref(), command.as_deref())?;
            ctx.emit(serde_json::to_value(&c)?, || format!("{}@{}", c.component_id, c.version))?;
        }
        ComponentCmd::Delete { node } => {
            platform.delete_node(&node)?;
            ctx.emit(json!({"deleted": node.to_string()}), || format!("deleted {node}"))?;
        }
        ComponentCmd::List { all } => {
            let nodes: Vec<_> = registry.snapshot().into_iter().filter(|s| all || !s.deleted).collect();
            ctx.emit(serde_json::to_value(&nodes)?, || {
                let mut t = String::new();
                for s in &nodes {
                    let r = s.node.node_ref();
                    let preds: Vec<String> = s.node.predecessors().iter().map(|p| p.to_string()).collect();
                    let what = match &s.node {
                        Node::Component(c) => format!("{} {} `{}`", c.kind.as_str(), c.image_ref, c.command),
                        Node::Upload(u) => format!("upload {} file(s) {}", u.files.len(), u.payload_digest.short()),
                    };
                    t.push_str(&format!(
                        "{r:<24} {what}{}{}\n",
                        if preds.is_empty() { String::new() } else { format!(" <- {}", preds.join(", ")) },
                        if s.deleted { " (deleted)" } else { "" }
                    ));
                }
                t
            })?;
        }
    }
    Ok(0)
}

fn pipeline(platform: &Platform, cmd: PipelineCmd, ctx: &mut Ctx<'_>) -> Result<i32> {
    match cmd {
        PipelineCmd::Resolve { terminal } => {
            let p = platform.resolve_pipeline(&terminal)?;
            let refs: Vec<String> = p.refs().iter().map(|r| r.to_string()).collect();
            ctx.emit(json!({"terminal": p.terminal.to_string(), "nodes": refs}), || refs.join("\n"))?;
            Ok(0)
        }
        PipelineCmd::Run {
            terminal,
            dataset,
            no_cache,
        } => {
            let run = platform.run_pipeline(&terminal, &dataset, !no_cache)?;
            let nodes: Vec<Value> = run
                .report
                .nodes
                .iter()
                .map(|n| {
                    json!({
                        "node": n.node.to_string(),
                        "state": n.state.as_str(),
                        "cache_key": n.cache_key,
                        "output_digest": n.output_digest,
                        "error": n.error,
                        "violations": n.violations,
                    })
                })
                .collect();
            let means: Value = run
                .evaluation
                .as_ref()
                .map(|e| e.reports.iter().map(|r| (r.measure.to_string(), json!(r.mean))).collect())
                .unwrap_or(Value::Null);
            let succeeded = run.report.succeeded();
            ctx.emit(
                json!({
                    "terminal": run.report.terminal.to_string(),
                    "dataset": dataset,
                    "succeeded": succeeded,
                    "launches": run.report.launches(),
                    "output_digest": run.report.terminal_entry.as_ref().map(|e| &e.output_digest),
                    "nodes": nodes,
                    "evaluation": means,
                }),
                || {
                    let mut t = String::new();
                    for n in &run.report.nodes {
                        t.push_str(&format!("{:<24} {}", n.node.to_string(), n.state.as_str()));
                        if let Some(k) = &n.cache_key {
                            t.push_str(&format!(" {}", k.short()));
                        }
                        if let Some(e) = &n.error {
                            t.push_str(&format!(" ({e})"));
                        }
                        t.push('\n');
                    }
                    if let Some(e) = &run.report.terminal_entry {
                        t.push_str(&format!("output {}\n", e.output_digest));
                    }
                    if let Some(ev) = &run.evaluation {
                        for r in &ev.reports {
                            t.push_str(&format!("{} {:.4}\n", r.measure, r.mean));
                        }
                    }
                    t
                },
            )?;
            if succeeded {
                Ok(0)
            } else {
                Err(run.report.into_terminal().expect_err("not succeeded"))
            }
        }
    }
}

fn evaluate(platform: &Platform, args: EvaluateArgs, ctx: &mut Ctx<'_>) -> Result<i32> {
    let text = fs::read_to_string(&args.run).at(&args.run)?;
    let evaluation = platform.evaluate(&text, &args.dataset, &args.measures)?;
    let recorded = match &args.submit {
        Some(approach) => Some(platform.submit_run(approach, &args.dataset, &text)?.0),
        None => None,
    };
    for f in &evaluation.sanity.findings {
        eprintln!("warning: {} {}", f.code, f.detail);
    }
    let value: Value = serde_json::from_str(&evaluator::evaluation_json(&evaluation.reports)?)?;
    ctx.emit(
        json!({
            "run_digest": Digest::of_bytes(text.as_bytes()),
            "evaluation": value,
            "sanity": evaluation.sanity,
            "recorded": recorded,
        }),
        || {
            let mut t = String::new();
            if let Some(r) = &recorded {
                t.push_str(&format!("recorded {}/{} {}\n", r.approach, r.dataset_id, r.run_digest));
            }
            for r in &evaluation.reports {
                t.push_str(&format!(
                    "{} {:.4} over {} queries\n",
                    r.measure, r.mean, r.evaluated_query_count
                ));
            }
            for n in &evaluation.sanity.notes {
                t.push_str(&format!("note: {n}\n"));
            }
            t
        },
    )?;
    Ok(0)
}

fn archive_cmd(platform: &Platform, role: AccessRole, cmd: ArchiveCmd, ctx: &mut Ctx<'_>) -> Result<i32> {
    match cmd {
        ArchiveCmd::Export {
            dest,
            task_id,
            datasets,
            include_test_data,
            withhold_runs,
            embed_images,
        } => {
            let mut options = ExportOptions::new(&task_id, role);
            options.datasets = (!datasets.is_empty()).then_some(datasets);
            options.include_test_data = include_test_data;
            options.withhold_confidential_runs = withhold_runs;
            options.embed_images = embed_images;
            let m = archive::export_archive(platform, &dest, &options)?;
            ctx.emit(
                json!({"path": dest, "content_digest": m.content_digest, "files": m.files.len(), "runs": m.runs.len()}),
                || format!("{} {} ({} files)", dest.display(), m.content_digest, m.files.len()),
            )?;
        }
        ArchiveCmd::Import { path } => {
            let s = archive::import_archive(platform, &path)?;
            ctx.emit(serde_json::to_value(&s)?, || {
                format!(
                    "imported task {}: {} dataset(s), {} withheld, {} registry event(s), {} run(s)",
                    s.task_id,
                    s.datasets_installed.len(),
                    s.datasets_withheld.len(),
                    s.log_events_imported,
                    s.runs_imported
                )
            })?;
        }
        ArchiveCmd::Replay {
            approach,
            dataset,
            archive: path,
        } => {
            let r = archive::replay(platform, path.as_deref(), &approach, &dataset)?;
            let means: Value = r
                .evaluation
                .as_ref()
                .map(|e| e.reports.iter().map(|x| (x.measure.to_string(), json!(x.mean))).collect())
                .unwrap_or(Value::Null);
            ctx.emit(
                json!({
                    "approach": approach,
                    "dataset": dataset,
                    "cache_key": r.entry_key,
                    "output_digest": r.output_digest,
                    "reproduced": r.reproduced(),
                    "evaluation": means,
                }),
                || {
                    let mut t = format!("{} {}\n", r.entry_key.short(), r.output_digest);
                    match r.reproduced() {
                        Some(true) => t.push_str("output identical to the archived run\n"),
                        Some(false) => t.push_str("output differs from the archived run\n"),
                        None => {}
                    }
                    if let Some(ev) = &r.evaluation {
                        for x in &ev.reports {
                            t.push_str(&format!("{} {:.4}\n", x.measure, x.mean));
                        }
                    }
                    t
                },
            )?;
        }
        ArchiveCmd::FetchRun {
            archive: path,
            approach,
            dataset,
            output,
        } => {
            let run = archive::fetch_run(&path, &approach, &dataset)?;
            let bytes = formats::run_to_bytes(&run)?;
            match output {
                Some(dest) => {
                    fs::write(&dest, &bytes).at(&dest)?;
                    ctx.emit(json!({"path": dest, "lines": run.lines().len()}), || dest.display().to_string())?;
                }
                None => ctx.out.write_all(&bytes)?,
            }
        }
    }
    Ok(0)
}
