//! `jointlk` command line.
//!
//! Every failure ends with exactly one JSON line on stderr,
//! `{"error":{"kind":..,"message":..,"path":..}}`, and a nonzero exit.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use super::{
    generate_synthetic, gradcheck_model, load_config, load_spec, read_dataset, read_text, retrieve_choices,
    write_task, write_text, DataPaths, LoadedTask, SyntheticTaskSpec,
};
use crate::error::{Error, Result};
use crate::model::{evaluate, train, EvalReport, JointLKConfig};
use crate::tensor::Checkpoint;

#[derive(Debug, Parser)]
#[command(name = "jointlk", version, about = "Joint LM/KG reasoning with attention-guided graph pruning")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic path-reasoning task (KG + train/dev splits).
    Gen {
        /// key=value task spec; defaults apply for missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve per-choice subgraphs for a dataset split.
    Retrieve {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "dev")]
        split: String,
        /// Dataset file; overrides `--split`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = crate::kg::DEFAULT_MAX_NODES)]
        max_nodes: usize,
        #[arg(long, default_value = "structural")]
        scorer: String,
        /// JSON lines, one record per line.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.json, metrics.jsonl and config.txt.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and print the accuracy report.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record the pruning trace of one question/choice pair.
    Trace {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "dev")]
        split: String,
        /// Dataset file; overrides `--split`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Record id; defaults to the first record.
        #[arg(long)]
        record: Option<String>,
        /// Choice index; defaults to the gold answer.
        #[arg(long)]
        choice: Option<usize>,
        /// Writes trace.json, subgraph.json and layer<l>.dot.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the full model described by a config.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Task directory written by `gen`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// KG edge file (head, relation, tail per line).
    #[arg(long)]
    kg: Option<PathBuf>,
    #[arg(long)]
    concepts: Option<PathBuf>,
    #[arg(long)]
    relations: Option<PathBuf>,
    #[arg(long)]
    tokens: Option<PathBuf>,
}

impl DataArgs {
    fn paths(&self) -> DataPaths {
        DataPaths {
            dir: self.data.clone(),
            edges: self.kg.clone(),
            concepts: self.concepts.clone(),
            relations: self.relations.clone(),
            tokens: self.tokens.clone(),
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to config.txt next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ModelArgs {
    fn config_path(&self) -> PathBuf {
        self.config.clone().unwrap_or_else(|| {
            self.checkpoint
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("config.txt")
        })
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let message = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&message).trim_start_matches("error: ");
            eprintln!("{}", json!({"error": {"kind": "usage", "message": first}}));
            return 2;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose {
        "info"
    } else {
        "warn"
    }))
    .format_timestamp(None)
    .try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let mut err = json!({"kind": e.kind(), "message": e.to_string()});
            if let Some(p) = e.path() {
                err["path"] = json!(p);
            }
            eprintln!("{}", json!({ "error": err }));
            1
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_model(task: &LoadedTask, args: &ModelArgs) -> Result<crate::model::JointLK> {
    let config = load_config(&args.config_path())?;
    let mut model = task.new_model(config)?;
    let ck = Checkpoint::from_json(&read_text(&args.checkpoint)?).map_err(|e| Error::Parse {
        path: args.checkpoint.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    model.store.load_checkpoint(&ck)?;
    Ok(model)
}

fn dataset_path(data: &DataPaths, split: &str, explicit: &Option<PathBuf>) -> Result<PathBuf> {
    match explicit {
        Some(p) => Ok(p.clone()),
        None => data.split(split),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { spec, seed, out } => {
            let mut spec = match spec {
                Some(p) => load_spec(&p)?,
                None => SyntheticTaskSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let task = generate_synthetic(&spec, spec.seed)?;
            write_task(&out, &task, &spec)?;
            println!(
                "{}",
                json!({
                    "out": out.display().to_string(),
                    "train": task.train.len(),
                    "dev": task.dev.len(),
                    "concepts": task.kg.num_concepts(),
                    "edges": task.kg.edges().len() / 2,
                    "tokens": task.vocab.len(),
                })
            );
        }
        Command::Retrieve {
            data,
            split,
            dataset,
            max_nodes,
            scorer,
            out,
        } => {
            let paths = data.paths();
            let kg = paths.load_kg()?;
            let records = read_dataset(&dataset_path(&paths, &split, &dataset)?)?;
            let scorer = crate::kg::scorer_by_name(&scorer)?;
            let mut text = String::new();
            for r in &records {
                let subs = retrieve_choices(r, &kg, max_nodes, scorer.as_ref())?;
                let choices: Vec<serde_json::Value> = subs
                    .iter()
                    .map(|s| {
                        serde_json::from_str(&s.to_export_json(|rel| kg.relations().name(rel)))
                            .expect("export is valid JSON")
                    })
                    .collect();
                text.push_str(&json!({"id": r.id, "gold": r.gold, "choices": choices}).to_string());
                text.push('\n');
            }
            write_text(&out, &text)?;
        }
        Command::Train { data, config, out } => {
            let cfg = load_config(&config)?;
            let paths = data.paths();
            let task = LoadedTask::load(&paths)?;
            let train_set = task.prepare(&read_dataset(&paths.split("train")?)?, &cfg)?;
            let dev_set = task.prepare(&read_dataset(&paths.split("dev")?)?, &cfg)?;
            create_dir(&out)?;
            write_text(&out.join("config.txt"), &cfg.to_kv())?;
            let metrics_path = out.join("metrics.jsonl");
            let mut metrics = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
            let mut write_err = None;
            let mut model = task.new_model(cfg)?;
            let result = train(&mut model, &train_set, &dev_set, |m| {
                let line = serde_json::to_string(m).expect("metrics serialize");
                if let Err(e) = writeln!(metrics, "{line}") {
                    write_err.get_or_insert(e);
                }
            });
            if let Some(e) = write_err {
                return Err(Error::io(&metrics_path, e));
            }
            let report = match result {
                Ok(r) => r,
                Err(Error::Diverged { epoch, loss, last_good }) => {
                    let p = out.join("checkpoint.json");
                    last_good.write(&p)?;
                    return Err(Error::Diverged { epoch, loss, last_good });
                }
                Err(e) => return Err(e),
            };
            model.store.save(&out.join("checkpoint.json"))?;
            println!(
                "{}",
                json!({
                    "best_epoch": report.best_epoch,
                    "best_dev_accuracy": report.best_dev_accuracy,
                    "epochs_run": report.epochs_run,
                    "parameters": model.num_parameters(),
                })
            );
        }
        Command::Eval { data, model, split, out } => {
            let paths = data.paths();
            let task = LoadedTask::load(&paths)?;
            let m = load_model(&task, &model)?;
            let set = task.prepare(&read_dataset(&paths.split(&split)?)?, &m.config)?;
            let report: EvalReport = evaluate(&m, &set);
            let text = serde_json::to_string(&report).expect("report serializes");
            if let Some(p) = out {
                write_text(&p, &format!("{text}\n"))?;
            }
            println!("{text}");
        }
        Command::Trace {
            data,
            model,
            split,
            dataset,
            record,
            choice,
            out,
        } => {
            let paths = data.paths();
            let task = LoadedTask::load(&paths)?;
            let m = load_model(&task, &model)?;
            let ds_path = dataset_path(&paths, &split, &dataset)?;
            let records = read_dataset(&ds_path)?;
            let r = match &record {
                Some(id) => records
                    .iter()
                    .find(|r| &r.id == id)
                    .ok_or_else(|| Error::Config(format!("no record `{id}` in {}", ds_path.display())))?,
                None => records.first().ok_or(Error::EmptyDataset("trace"))?,
            };
            let c = choice.unwrap_or(r.gold);
            if c >= r.choices.len() {
                return Err(Error::Config(format!("choice {c} out of range for record {}", r.id)));
            }
            let scorer = crate::kg::scorer_by_name(&m.config.scorer)?;
            let subs = retrieve_choices(r, &task.kg, m.config.max_nodes, scorer.as_ref())?;
            let q = super::prepare_record(r, &task.kg, &task.vocab, m.config.max_nodes, scorer.as_ref())?;
            let (score, trace) = m.trace(&q.choices[c])?;
            create_dir(&out)?;
            write_text(&out.join("trace.json"), &trace.to_json())?;
            let sub = &subs[c];
            let rel_name = |rel| task.kg.relations().name(rel);
            write_text(&out.join("subgraph.json"), &sub.to_export_json(rel_name))?;
            for l in 0..trace.layers.len() {
                write_text(
                    &out.join(format!("layer{}.dot", l + 1)),
                    &trace.to_dot(l, &sub.edges, rel_name),
                )?;
            }
            println!(
                "{}",
                json!({
                    "record": r.id,
                    "choice": c,
                    "score": score,
                    "kept_counts": trace.kept_counts(),
                    "survivors": trace.survivors().iter().map(|&i| sub.nodes[i].name.clone()).collect::<Vec<_>>(),
                })
            );
        }
        Command::Gradcheck { config, tol, seed } => {
            let cfg: JointLKConfig = load_config(&config)?;
            let report = gradcheck_model(&cfg, seed)?;
            let max = report.max_rel_error();
            println!(
                "{}",
                json!({"pass": report.passes(tol), "tol": tol, "max_rel_error": max, "params": report.params})
            );
            if !report.passes(tol) {
                return Err(Error::GradCheck { max_rel_error: max, tol });
            }
        }
    }
    Ok(())
}
