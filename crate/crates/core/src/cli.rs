//! Command-line entry point: `gen`, `annotate`, `stats`, `train`, `reduce`
//! and `eval`. Exit codes: 0 success, 1 usage error, 2 data error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};
use serde::Serialize;

use crate::config::{read_config_file, AnswererKind, RunConfig, KEYS, PATH_KEYS};
use crate::corpus::Corpus;
use crate::eval::{
    bucketed_report, dataset_stats, evaluate_downstream, evaluate_reductions, generate_synthetic_corpus,
    summarize_downstream, summarize_reductions, write_csv, write_jsonl, Answerer, MetricGrid, SimulatedAnswerer,
};
use crate::oracle::annotate_corpus;
use crate::policy::{reduce_instance, Checkpoint, Policy};
use crate::prompt::Stage;
use crate::table::{apply_mask, read_instances, write_instances, ItemMask, QaInstance, TableFormat};
use crate::train::train;

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const COLUMN_CHECKPOINT: &str = "column_policy.json";
pub const ROW_CHECKPOINT: &str = "row_policy.json";

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("gen", "generate a seeded synthetic corpus"),
    ("annotate", "derive oracle masks for an instance file"),
    ("stats", "corpus statistics"),
    ("train", "supervised then policy-gradient training of both stage policies"),
    ("reduce", "write reduced tables and masks using trained policies"),
    ("eval", "reduction metrics and the bucketed downstream report"),
];

/// Failure of a command; the variant picks the exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn data(e: impl std::fmt::Display) -> CliError {
        CliError::Data(e.to_string())
    }
}

fn command() -> Command {
    let mut root = Command::new("tabreduce")
        .about("Learned row/column context reduction for table question answering")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("flat key = value config file; flags override it"),
        );
    for (key, help) in KEYS {
        root = root.arg(Arg::new(*key).long(*key).global(true).value_name("VALUE").help(*help));
    }
    for (name, about) in SUBCOMMANDS {
        root = root.subcommand(Command::new(*name).about(*about));
    }
    root
}

/// Runs one command line (including the program name) and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match dispatch(name, sub) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\n{}", command().render_usage());
            EXIT_USAGE
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            EXIT_DATA
        }
    }
}

fn settings(m: &ArgMatches) -> Result<BTreeMap<String, String>, CliError> {
    let mut s = match m.get_one::<String>("config") {
        Some(p) => read_config_file(Path::new(p)).map_err(|e| CliError::Usage(e.to_string()))?,
        None => BTreeMap::new(),
    };
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            s.insert(key.to_string(), v.clone());
        }
    }
    Ok(s)
}

fn dispatch(name: &str, m: &ArgMatches) -> Result<(), CliError> {
    let cfg = RunConfig::from_settings(&settings(m)?).map_err(|e| CliError::Usage(e.to_string()))?;
    match name {
        "gen" => cmd_gen(&cfg),
        "annotate" => cmd_annotate(&cfg),
        "stats" => cmd_stats(&cfg),
        "train" => cmd_train(&cfg),
        "reduce" => cmd_reduce(&cfg),
        "eval" => cmd_eval(&cfg),
        other => Err(CliError::Usage(format!("unknown command {other}"))),
    }
}

/// A path setting the command needs; absent is a usage error, missing on
/// disk a data error.
fn required_path(cfg: &RunConfig, key: &str, must_exist: bool) -> Result<PathBuf, CliError> {
    debug_assert!(PATH_KEYS.contains(&key));
    let p = match key {
        "out" => &cfg.out,
        "tables" => &cfg.tables,
        "instances" => &cfg.instances,
        "eval-instances" => &cfg.eval_instances,
        _ => &cfg.checkpoints,
    };
    let p = p.clone().ok_or_else(|| CliError::Usage(format!("--{key} is required")))?;
    if must_exist && !p.exists() {
        return Err(CliError::Data(format!("{} does not exist", p.display())));
    }
    Ok(p)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = required_path(cfg, "out", false)?;
    fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    Ok(out)
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let tables = required_path(cfg, "tables", true)?;
    let instances = required_path(cfg, "instances", true)?;
    let corpus = Corpus::load(&tables, &instances).map_err(CliError::data)?;
    let dangling = corpus.dangling();
    if !dangling.is_empty() {
        return Err(CliError::Data(format!("instances reference unknown tables: {}", dangling.join(", "))));
    }
    Ok(corpus)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    corpus_hash: String,
    seed: u64,
    outputs: Vec<String>,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes `manifest_<command>.json` plus the effective config beside it.
fn finish(cfg: &RunConfig, out: &Path, command: &str, corpus_hash: String, mut outputs: Vec<String>) -> Result<(), CliError> {
    let config_file = format!("config_{command}.txt");
    fs::write(out.join(&config_file), cfg.to_config_text()).map_err(CliError::data)?;
    outputs.push(config_file);
    outputs.sort();
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        corpus_hash,
        seed: cfg.seed,
        outputs,
    };
    write_json(&out.join(format!("manifest_{command}.json")), &manifest)
}

fn cmd_gen(cfg: &RunConfig) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    let corpus = generate_synthetic_corpus(&cfg.synth).map_err(|e| CliError::Usage(e.to_string()))?;
    let n_test = (corpus.instances.len() as f64 * cfg.test_fraction).round() as usize;
    let (train_set, test_set) = corpus.instances.split_at(corpus.instances.len() - n_test);
    corpus.save_tables(&out.join("tables")).map_err(CliError::data)?;
    write_instances(&out.join("train.jsonl"), train_set).map_err(CliError::data)?;
    write_instances(&out.join("test.jsonl"), test_set).map_err(CliError::data)?;
    say!(
        "generated {} tables, {} train and {} test instances in {}",
        corpus.tables.len(),
        train_set.len(),
        test_set.len(),
        out.display()
    );
    let outputs = vec!["tables/".into(), "train.jsonl".into(), "test.jsonl".into()];
    finish(cfg, &out, "gen", corpus.content_hash(), outputs)
}

/// Fills in masks (and answers) for instances that lack a mask. Instances
/// the oracle rejects are dropped and reported on stderr.
fn annotated(cfg: &RunConfig, corpus: &Corpus, instances: &[QaInstance]) -> Vec<QaInstance> {
    let todo: Vec<QaInstance> = instances.iter().filter(|i| i.gold_mask.is_none()).cloned().collect();
    let mut done = annotate_corpus(&todo, &|id| corpus.table(id), &cfg.oracle, cfg.exec).into_iter();
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        if inst.gold_mask.is_some() {
            out.push(inst.clone());
            continue;
        }
        match done.next().expect("one result per unannotated instance") {
            Ok(a) => out.push(a),
            Err(e) => eprintln!("skipped: {e}"),
        }
    }
    out
}

fn cmd_annotate(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let src = required_path(cfg, "instances", true)?;
    let out = match &cfg.out {
        Some(_) => out_dir(cfg)?,
        None => src.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let mut fresh = corpus.instances.clone();
    fresh.iter_mut().for_each(|i| i.gold_mask = None);
    let results = annotate_corpus(&fresh, &|id| corpus.table(id), &cfg.oracle, cfg.exec);
    let mut ok = Vec::new();
    for r in results {
        match r {
            Ok(i) => ok.push(i),
            Err(e) => eprintln!("skipped: {e}"),
        }
    }
    let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("instances");
    let name = format!("{stem}.annotated.jsonl");
    write_instances(&out.join(&name), &ok).map_err(CliError::data)?;
    say!("annotated {} of {} instances -> {}", ok.len(), fresh.len(), out.join(&name).display());
    finish(cfg, &out, "annotate", corpus.with_instances(ok).content_hash(), vec![name])
}

fn cmd_stats(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let stats = dataset_stats(&corpus, &cfg.thresholds).map_err(CliError::data)?;
    let text = serde_json::to_string_pretty(&stats).expect("serializable");
    say!("{text}");
    if cfg.out.is_some() {
        let out = out_dir(cfg)?;
        write_json(&out.join("stats.json"), &stats)?;
        finish(cfg, &out, "stats", corpus.content_hash(), vec!["stats.json".into()])?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CurvePoint {
    iteration: usize,
    column_recall: f64,
    column_precision: f64,
    row_recall: f64,
    row_precision: f64,
    mean_reward: f64,
}

fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    let corpus = load_corpus(cfg)?;
    let train_set = annotated(cfg, &corpus, &corpus.instances);
    let eval_set = match &cfg.eval_instances {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Data(format!("{} does not exist", p.display())));
            }
            let raw = read_instances(p).map_err(CliError::data)?;
            let with = corpus.with_instances(raw);
            let dangling = with.dangling();
            if !dangling.is_empty() {
                return Err(CliError::Data(format!("instances reference unknown tables: {}", dangling.join(", "))));
            }
            annotated(cfg, &corpus, &with.instances)
        }
        None => train_set.clone(),
    };
    if train_set.is_empty() {
        return Err(CliError::Data("no annotatable training instances".into()));
    }
    let trained = train(&corpus, &train_set, &eval_set, &cfg.train, cfg.exec);
    let hash = cfg.hash();
    for (policy, file) in [(&trained.column, COLUMN_CHECKPOINT), (&trained.row, ROW_CHECKPOINT)] {
        Checkpoint::from_policy(policy, &hash).save(&out.join(file)).map_err(CliError::data)?;
    }
    write_json(&out.join("train_report.json"), &trained.report)?;
    let curve: Vec<CurvePoint> = trained
        .report
        .evals
        .iter()
        .map(|e| CurvePoint {
            iteration: e.iteration,
            column_recall: e.metrics.columns.recall,
            column_precision: e.metrics.columns.precision,
            row_recall: e.metrics.rows.recall,
            row_precision: e.metrics.rows.precision,
            mean_reward: e.mean_reward,
        })
        .collect();
    write_csv(&out.join("recall_curve.csv"), &curve).map_err(CliError::data)?;
    write_jsonl(&out.join("train_report.jsonl"), &trained.report.evals).map_err(CliError::data)?;
    for e in &trained.report.evals {
        say!(
            "iteration {:>3}: column recall {:.4} precision {:.4} | row recall {:.4} precision {:.4} | reward {:.4}",
            e.iteration,
            e.metrics.columns.recall,
            e.metrics.columns.precision,
            e.metrics.rows.recall,
            e.metrics.rows.precision,
            e.mean_reward
        );
    }
    let outputs = vec![
        COLUMN_CHECKPOINT.into(),
        ROW_CHECKPOINT.into(),
        "train_report.json".into(),
        "train_report.jsonl".into(),
        "recall_curve.csv".into(),
    ];
    let mut all = train_set;
    all.extend(eval_set);
    finish(cfg, &out, "train", corpus.with_instances(all).content_hash(), outputs)
}

fn load_policies(cfg: &RunConfig) -> Result<(Policy, Policy), CliError> {
    let dir = cfg
        .checkpoints
        .clone()
        .ok_or_else(|| CliError::Data("no trained checkpoint: pass --checkpoints DIR (the output of `train`)".into()))?;
    let load = |file: &str, stage: Stage| -> Result<Policy, CliError> {
        let path = dir.join(file);
        if !path.exists() {
            return Err(CliError::Data(format!("no trained checkpoint at {}", path.display())));
        }
        let p = Checkpoint::load(&path).and_then(Checkpoint::into_policy).map_err(CliError::data)?;
        if p.stage() != stage {
            return Err(CliError::Data(format!("{} holds a {} policy, expected {stage}", path.display(), p.stage())));
        }
        Ok(p)
    };
    Ok((load(COLUMN_CHECKPOINT, Stage::Column)?, load(ROW_CHECKPOINT, Stage::Row)?))
}

#[derive(Serialize)]
struct MaskRecord<'a> {
    instance_id: &'a str,
    table_id: &'a str,
    mask: &'a ItemMask,
}

fn cmd_reduce(cfg: &RunConfig) -> Result<(), CliError> {
    let (column, row) = load_policies(cfg)?;
    let corpus = load_corpus(cfg)?;
    let out = out_dir(cfg)?;
    let masks = cfg.exec.map(&corpus.instances, |_, inst| {
        reduce_instance(&column, &row, &inst.question, corpus.table_of(inst))
    });
    let dir = out.join("reduced");
    fs::create_dir_all(&dir).map_err(CliError::data)?;
    let mut records = Vec::new();
    for (inst, mask) in corpus.instances.iter().zip(&masks) {
        let reduced = apply_mask(corpus.table_of(inst), mask).map_err(CliError::data)?;
        reduced
            .write_delimited(&dir.join(format!("{}.csv", inst.id)), TableFormat::Csv)
            .map_err(CliError::data)?;
        records.push(MaskRecord {
            instance_id: &inst.id,
            table_id: &inst.table_id,
            mask,
        });
    }
    write_jsonl(&out.join("masks.jsonl"), &records).map_err(CliError::data)?;
    say!("reduced {} instances -> {}", records.len(), out.display());
    finish(cfg, &out, "reduce", corpus.content_hash(), vec!["reduced/".into(), "masks.jsonl".into()])
}

#[derive(Serialize)]
struct GridRow {
    side: &'static str,
    recall: f64,
    precision: f64,
}

#[derive(Serialize)]
struct DownstreamRow {
    condition: String,
    n: usize,
    answered: usize,
    correct: usize,
    accuracy: f64,
    answered_rate: f64,
}

#[derive(Serialize)]
struct Summary {
    instances: usize,
    skipped: usize,
    answerer: String,
    budget: usize,
    reduction: MetricGrid,
    downstream: Vec<DownstreamRow>,
}

fn answerer(cfg: &RunConfig) -> Result<Box<dyn Answerer>, CliError> {
    match cfg.answerer {
        AnswererKind::Simulated => Ok(Box::new(SimulatedAnswerer { budget: cfg.budget })),
        #[cfg(feature = "remote")]
        AnswererKind::Remote => crate::eval::remote::RemoteAnswerer::from_env(cfg.budget)
            .map(|a| Box::new(a) as Box<dyn Answerer>)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "the remote answerer needs {} in the environment",
                    crate::eval::remote::ENDPOINT_VAR
                ))
            }),
        #[cfg(not(feature = "remote"))]
        AnswererKind::Remote => Err(CliError::Usage("built without the `remote` feature".into())),
    }
}

fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let (column, row) = load_policies(cfg)?;
    let corpus = load_corpus(cfg)?;
    let out = out_dir(cfg)?;
    let answerer = answerer(cfg)?;
    let instances = annotated(cfg, &corpus, &corpus.instances);
    let skipped = corpus.instances.len() - instances.len();
    let reductions = evaluate_reductions(&column, &row, &corpus, &instances, cfg.exec);
    let downstream = evaluate_downstream(&corpus, &instances, &reductions, answerer.as_ref(), cfg.exec);

    let grid = summarize_reductions(&reductions);
    let summary = Summary {
        instances: instances.len(),
        skipped,
        answerer: cfg.answerer.to_string(),
        budget: cfg.budget.max_tokens(),
        reduction: grid,
        downstream: summarize_downstream(&downstream)
            .into_iter()
            .map(|r| DownstreamRow {
                condition: r.condition.to_string(),
                n: r.n,
                answered: r.answered,
                correct: r.correct,
                accuracy: r.accuracy(),
                answered_rate: r.answered_rate(),
            })
            .collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    let rows = [
        GridRow {
            side: "column",
            recall: grid.columns.recall,
            precision: grid.columns.precision,
        },
        GridRow {
            side: "row",
            recall: grid.rows.recall,
            precision: grid.rows.precision,
        },
    ];
    write_csv(&out.join("summary.csv"), &rows).map_err(CliError::data)?;
    write_csv(&out.join("downstream.csv"), &summary.downstream).map_err(CliError::data)?;
    let buckets = bucketed_report(&downstream, &cfg.buckets);
    write_csv(&out.join("buckets.csv"), &buckets).map_err(CliError::data)?;
    write_jsonl(&out.join("buckets.jsonl"), &buckets).map_err(CliError::data)?;
    write_jsonl(&out.join("reductions.jsonl"), &reductions).map_err(CliError::data)?;
    write_jsonl(&out.join("downstream.jsonl"), &downstream).map_err(CliError::data)?;

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{:<8} {:>8} {:>10}", "", "recall", "precision");
    for r in &rows {
        let _ = writeln!(stdout, "{:<8} {:>8.4} {:>10.4}", r.side, r.recall, r.precision);
    }
    for d in &summary.downstream {
        let _ = writeln!(stdout, "{:<22} accuracy {:.4} answered {:.4} (n={})", d.condition, d.accuracy, d.answered_rate, d.n);
    }
    let outputs = [
        "summary.json",
        "summary.csv",
        "downstream.csv",
        "buckets.csv",
        "buckets.jsonl",
        "reductions.jsonl",
        "downstream.jsonl",
    ]
    .map(String::from)
    .to_vec();
    finish(cfg, &out, "eval", corpus.with_instances(instances).content_hash(), outputs)
}
