//! The `pdalign` command-line front end.
//!
//! Configuration is resolved as defaults, then the `--config` file, then
//! `PDALIGN_<SECTION>_<KEY>` environment variables, then flags. Exit codes:
//! 0 success, 1 usage or configuration error, 2 data or format error,
//! 3 numerical failure.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{env_name, ClientKind, RunConfig, Split};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{
    build_difference_task, eval_comparative, eval_difference, eval_zeroshot, labelled_images, localization_report,
    render_table, LabelLine, LocalizationSummary, TaskSource, TaskStyle,
};
use crate::inference::{
    select_confused_pairs, ClassDifference, ClassDifferenceLine, PromptBank, PromptKind, PromptLine,
};
use crate::io::{read_jsonl, sha256_file, write_json, write_jsonl};
use crate::pipeline::{
    generate_dataset, sample_pairs, usable_only, ComparisonRecord, DifferenceSource, FilterStatus, GenerationOptions,
    HttpClient,
};
use crate::toyworld::{difference_sentence, generate_world, read_items, ItemRecord, KINDS};
use crate::train::{checkpoint, ensemble_weights, fit, fit_captions, EncoderParams, TrainLog};

/// Help text with the built-in default and environment variable of `key`.
fn h(key: &str, text: &str) -> String {
    let default = RunConfig::default().get(key).unwrap_or_default();
    let shown = if default.is_empty() { "\"\"".to_string() } else { default };
    format!("{text} [default: {shown}] [env: {}]", env_name(key))
}

#[derive(Debug, Parser)]
#[command(name = "pdalign", version, about = "Pairwise-difference alignment for vision-language embeddings")]
struct Cli {
    /// Config file of `[section]` headers and `key = value` lines
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true, help = h("run.seed", "Seed for sampling, initialization and shuffling"))]
    seed: Option<u64>,
    #[arg(long, global = true, help = h("run.workers", "Worker threads"))]
    workers: Option<usize>,
    /// Write `<output>.manifest.json` (resolved config, input hashes, timestamp) next to each output
    #[arg(long, global = true)]
    manifest: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a toy attribute world: items, image embeddings, class prompts, labels and class differences
    World(WorldArgs),
    /// Build a comparison dataset of difference texts for sampled item pairs
    Generate(GenerateArgs),
    /// Caption-align a fresh encoder (position table frozen)
    Pretrain(PretrainArgs),
    /// Finetune an encoder on pairwise differences
    Train(TrainArgs),
    /// Average two checkpoints elementwise
    Ensemble(EnsembleArgs),
    /// Zeroshot prompt classification with a confusion matrix
    EvalZeroshot(ZeroshotArgs),
    /// Difference-based classification accuracy over resampled seeds
    EvalDiff(EvalDiffArgs),
    /// Comparative prompting on the most confused class pairs
    CompPrompt(CompPromptArgs),
    /// Localization and reverse-comparison distances of class differences
    Localize(LocalizeArgs),
}

#[derive(Debug, Args)]
struct WorldArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, help = h("world.n_items", "Number of items"))]
    n_items: Option<usize>,
    #[arg(long, help = h("world.n_kinds", "Number of animal kinds (classes)"))]
    n_kinds: Option<usize>,
    #[arg(long, help = h("world.dim", "Embedding dimension"))]
    dim: Option<usize>,
    #[arg(long, help = h("world.noise_sigma", "Gaussian noise added to image embeddings"))]
    sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Items JSONL (id, attributes, caption) to sample pairs from
    #[arg(long, value_name = "FILE")]
    pairs_source: PathBuf,
    #[arg(long, help = h("generate.style", "Few-shot prompt style: coco or cub"))]
    style: Option<String>,
    #[arg(long, help = h("generate.n_source", "Items sampled; all ordered pairs of them are used"))]
    n_source: Option<usize>,
    #[arg(long, help = h("generate.client", "Difference source: oracle or http"))]
    client: Option<String>,
    #[arg(long, help = h("generate.max_inflight", "Concurrent requests"))]
    max_inflight: Option<usize>,
    #[arg(long, help = h("generate.max_tokens", "Token cap per completion"))]
    max_tokens: Option<usize>,
    #[arg(long, help = h("generate.url", "Completion endpoint for the http client"))]
    url: Option<String>,
    /// Write only accepted and truncated records
    #[arg(long)]
    accepted_only: bool,
    /// Output records JSONL
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    /// Image embedding table
    #[arg(long)]
    images: PathBuf,
    /// Items JSONL whose captions are aligned with their images
    #[arg(long)]
    items: PathBuf,
    /// Starting checkpoint (fresh seeded encoder when absent)
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, help = h("pretrain.lr", "Initial learning rate"))]
    lr: Option<f64>,
    #[arg(long, help = h("pretrain.epochs", "Epochs"))]
    epochs: Option<usize>,
    #[arg(long, help = h("pretrain.batch", "Batch size"))]
    batch: Option<usize>,
    /// Output checkpoint; the epoch log goes to `<out>.log.jsonl`
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Image embedding table
    #[arg(long)]
    images: PathBuf,
    /// Comparison records JSONL
    #[arg(long)]
    records: PathBuf,
    /// Starting checkpoint (fresh seeded encoder when absent)
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, help = h("train.loss", "Loss: contrastive or mse"))]
    loss: Option<String>,
    #[arg(long, help = h("train.tau", "Contrastive temperature"))]
    tau: Option<f64>,
    #[arg(long, help = h("train.lr", "Initial learning rate"))]
    lr: Option<f64>,
    #[arg(long, help = h("train.gamma", "Per-epoch learning-rate decay"))]
    gamma: Option<f64>,
    #[arg(long, help = h("train.epochs", "Epochs"))]
    epochs: Option<usize>,
    #[arg(long, help = h("train.batch", "Batch size"))]
    batch: Option<usize>,
    /// Output checkpoint; the epoch log goes to `<out>.log.jsonl`
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EncoderArg {
    /// Encoder checkpoint (fresh seeded encoder when absent)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ZeroshotArgs {
    #[arg(long)]
    images: PathBuf,
    #[command(flatten)]
    encoder: EncoderArg,
    /// Prompt bank JSONL (class, prompt, kind)
    #[arg(long)]
    prompts: PathBuf,
    /// Labels JSONL (id, class)
    #[arg(long)]
    labels: PathBuf,
    /// Report JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalDiffArgs {
    #[arg(long)]
    images: PathBuf,
    #[command(flatten)]
    encoder: EncoderArg,
    #[arg(long, help = h("eval.style", "Task style: attribute, size, color or llm"))]
    style: Option<String>,
    /// Items JSONL (attribute style; size and color groups when no group files are given)
    #[arg(long)]
    items: Option<PathBuf>,
    /// Comparison records JSONL (llm style)
    #[arg(long)]
    records: Option<PathBuf>,
    /// Ids of the larger (size) or yellow (color) group, one per line
    #[arg(long)]
    group_a: Option<PathBuf>,
    /// Ids of the smaller (size) or blue (color) group, one per line
    #[arg(long)]
    group_b: Option<PathBuf>,
    /// Records JSONL whose item ids are excluded from evaluation
    #[arg(long)]
    holdout: Option<PathBuf>,
    #[arg(long, help = h("eval.n_pairs", "Pairs per seed"))]
    n_pairs: Option<usize>,
    #[arg(long, help = h("eval.n_seeds", "Resampling seeds"))]
    n_seeds: Option<usize>,
    #[arg(long, help = h("eval.exclude", "Comma-separated attribute values left out of texts"))]
    exclude: Option<String>,
    /// Method name in the printed table
    #[arg(long, default_value = "encoder")]
    label: String,
    /// Report JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompPromptArgs {
    #[arg(long)]
    images: PathBuf,
    #[command(flatten)]
    encoder: EncoderArg,
    #[arg(long)]
    prompts: PathBuf,
    /// Class differences JSONL (class_b, class_a, difference_text)
    #[arg(long)]
    diffs: PathBuf,
    /// Labels JSONL of the evaluation split
    #[arg(long)]
    labels: PathBuf,
    /// Labels JSONL of the validation split used to pick confused pairs
    #[arg(long)]
    validation_labels: Option<PathBuf>,
    #[arg(long, help = h("eval.split", "Split the confusion matrix comes from: validation or test"))]
    split: Option<String>,
    #[arg(long, help = h("eval.alpha", "Weight kept on the original prompt"))]
    alpha: Option<f64>,
    #[arg(long, help = h("eval.top_k", "Confused pairs to update"))]
    top_k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    #[command(flatten)]
    encoder: EncoderArg,
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    diffs: PathBuf,
    /// Image table; with --labels restricts to the most confused pairs
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    #[arg(long, help = h("eval.top_k", "Confused pairs kept when labels are given"))]
    top_k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the CLI with the process environment.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(args, std::env::vars())
}

/// Runs the CLI with an explicit environment; returns the exit code.
pub fn run_with_env<I, T, E>(args: I, env: E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    E: IntoIterator<Item = (String, String)>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, env) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn new() -> Self {
        Overrides(Vec::new())
    }

    fn add<T: ToString>(&mut self, key: &'static str, v: &Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, v.to_string()));
        }
        self
    }
}

fn resolve<E>(cli: &Cli, env: E, flags: &Overrides) -> Result<RunConfig>
where
    E: IntoIterator<Item = (String, String)>,
{
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_env(env)?;
    let mut all = Overrides::new();
    all.add("run.seed", &cli.seed).add("run.workers", &cli.workers);
    for (k, v) in all.0.iter().chain(&flags.0) {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    /// Seconds since the Unix epoch; the only time-dependent field.
    created_unix: u64,
}

struct Session<'a> {
    command: &'a str,
    cfg: RunConfig,
    manifest: bool,
    inputs: Vec<PathBuf>,
}

impl Session<'_> {
    fn input(&mut self, p: &Path) -> PathBuf {
        self.inputs.push(p.to_path_buf());
        p.to_path_buf()
    }

    fn finish(&self, primary: &Path, outputs: &[PathBuf]) -> Result<()> {
        if !self.manifest {
            return Ok(());
        }
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        let m = Manifest {
            command: self.command,
            config: self.cfg.resolved().into_iter().collect(),
            inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let path = if primary.is_dir() {
            primary.join("manifest.json")
        } else {
            PathBuf::from(format!("{}.manifest.json", primary.display()))
        };
        write_json(&path, &m)
    }
}

fn log_path(out: &Path) -> PathBuf {
    PathBuf::from(format!("{}.log.jsonl", out.display()))
}

fn load_encoder(s: &mut Session<'_>, path: &Option<PathBuf>) -> Result<EncoderParams> {
    match path {
        Some(p) => checkpoint::load(s.input(p)),
        None => EncoderParams::init(s.cfg.encoder.clone(), s.cfg.seed),
    }
}

fn load_images(s: &mut Session<'_>, p: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::read(s.input(p))
}

fn load_bank(s: &mut Session<'_>, p: &Path, encoder: &EncoderParams) -> Result<PromptBank> {
    let lines: Vec<PromptLine> = read_jsonl(&s.input(p))?;
    PromptBank::from_lines(&lines, encoder)
}

fn load_diffs(s: &mut Session<'_>, p: &Path, encoder: &EncoderParams) -> Result<Vec<ClassDifference>> {
    let lines: Vec<ClassDifferenceLine> = read_jsonl(&s.input(p))?;
    lines.iter().map(|l| ClassDifference::encode(l, encoder)).collect()
}

fn read_ids(p: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(p).map_err(|e| Error::Data(format!("cannot open {}: {e}", p.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect())
}

fn print_log(log: &TrainLog) {
    if let (Some(first), Some(last)) = (log.epochs.first(), log.epochs.last()) {
        println!(
            "trained {} rows for {} epochs: loss {:.6} -> {:.6}",
            log.rows,
            log.epochs.len(),
            first.mean_loss,
            last.mean_loss
        );
    } else {
        println!("0 epochs: parameters unchanged");
    }
}

fn execute<E>(cli: Cli, env: E) -> Result<()>
where
    E: IntoIterator<Item = (String, String)>,
{
    let mut flags = Overrides::new();
    let name = match &cli.command {
        Command::World(a) => {
            flags
                .add("world.n_items", &a.n_items)
                .add("world.n_kinds", &a.n_kinds)
                .add("world.dim", &a.dim)
                .add("world.noise_sigma", &a.sigma);
            "world"
        }
        Command::Generate(a) => {
            flags
                .add("generate.style", &a.style)
                .add("generate.n_source", &a.n_source)
                .add("generate.client", &a.client)
                .add("generate.max_inflight", &a.max_inflight)
                .add("generate.max_tokens", &a.max_tokens)
                .add("generate.url", &a.url);
            "generate"
        }
        Command::Pretrain(a) => {
            flags.add("pretrain.lr", &a.lr).add("pretrain.epochs", &a.epochs).add("pretrain.batch", &a.batch);
            "pretrain"
        }
        Command::Train(a) => {
            flags
                .add("train.loss", &a.loss)
                .add("train.tau", &a.tau)
                .add("train.lr", &a.lr)
                .add("train.gamma", &a.gamma)
                .add("train.epochs", &a.epochs)
                .add("train.batch", &a.batch);
            "train"
        }
        Command::Ensemble(_) => "ensemble",
        Command::EvalZeroshot(_) => "eval-zeroshot",
        Command::EvalDiff(a) => {
            flags
                .add("eval.style", &a.style)
                .add("eval.n_pairs", &a.n_pairs)
                .add("eval.n_seeds", &a.n_seeds)
                .add("eval.exclude", &a.exclude);
            "eval-diff"
        }
        Command::CompPrompt(a) => {
            flags.add("eval.split", &a.split).add("eval.alpha", &a.alpha).add("eval.top_k", &a.top_k);
            "comp-prompt"
        }
        Command::Localize(a) => {
            flags.add("eval.top_k", &a.top_k);
            "localize"
        }
    };
    let cfg = resolve(&cli, env, &flags)?;
    let mut s = Session { command: name, cfg, manifest: cli.manifest, inputs: Vec::new() };
    match &cli.command {
        Command::World(a) => cmd_world(&mut s, a),
        Command::Generate(a) => cmd_generate(&mut s, a),
        Command::Pretrain(a) => cmd_pretrain(&mut s, a),
        Command::Train(a) => cmd_train(&mut s, a),
        Command::Ensemble(a) => cmd_ensemble(&mut s, a),
        Command::EvalZeroshot(a) => cmd_eval_zeroshot(&mut s, a),
        Command::EvalDiff(a) => cmd_eval_diff(&mut s, a),
        Command::CompPrompt(a) => cmd_comp_prompt(&mut s, a),
        Command::Localize(a) => cmd_localize(&mut s, a),
    }
}

fn cmd_world(s: &mut Session<'_>, a: &WorldArgs) -> Result<()> {
    let world = generate_world(&s.cfg.world_config())?;
    std::fs::create_dir_all(&a.out)?;
    let items = a.out.join("items.jsonl");
    let images = a.out.join("images.embt");
    let prompts = a.out.join("prompts.jsonl");
    let labels = a.out.join("labels.jsonl");
    let diffs = a.out.join("class_diffs.jsonl");
    world.dump(&items, &images)?;

    let kinds = &KINDS[..world.config.n_kinds];
    let prompt_lines: Vec<PromptLine> = kinds
        .iter()
        .map(|k| PromptLine { class: k.to_string(), prompt: format!("a photo of a {k}"), kind: PromptKind::Standard })
        .collect();
    write_jsonl(&prompts, &prompt_lines)?;
    let label_lines: Vec<LabelLine> = world
        .items
        .iter()
        .map(|it| LabelLine { id: it.id.clone(), class: KINDS[it.attributes.kind].to_string() })
        .collect();
    write_jsonl(&labels, &label_lines)?;
    let mut diff_lines = Vec::new();
    for b in kinds {
        for a in kinds {
            if a != b {
                diff_lines.push(ClassDifferenceLine {
                    class_b: b.to_string(),
                    class_a: a.to_string(),
                    difference_text: difference_sentence(&[b.to_string()], &[a.to_string()]),
                });
            }
        }
    }
    write_jsonl(&diffs, &diff_lines)?;
    println!(
        "wrote {} items with {}-dimensional embeddings to {}",
        world.items.len(),
        world.config.dim,
        a.out.display()
    );
    s.finish(&a.out, &[items, images, prompts, labels, diffs])
}

fn cmd_generate(s: &mut Session<'_>, a: &GenerateArgs) -> Result<()> {
    let items: Vec<ItemRecord> = read_items(&s.input(&a.pairs_source))?;
    let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    let pairs = sample_pairs(&ids, s.cfg.generate.n_source, s.cfg.seed)?;
    let opts = GenerationOptions {
        style: s.cfg.generate.style,
        max_inflight: s.cfg.generate.max_inflight,
        max_tokens: s.cfg.generate.max_tokens,
        retry: s.cfg.retry_policy(),
    };
    let records = match s.cfg.generate.client {
        ClientKind::Oracle => generate_dataset(&DifferenceSource::Oracle, &items, &pairs, &opts)?,
        ClientKind::Http => {
            let client = HttpClient::new(s.cfg.generate.http.clone())?;
            generate_dataset(&DifferenceSource::Client(&client), &items, &pairs, &opts)?
        }
    };
    if a.accepted_only {
        write_jsonl(&a.out, &usable_only(&records))?;
    } else {
        write_jsonl(&a.out, &records)?;
    }
    let count = |f: fn(&FilterStatus) -> bool| records.iter().filter(|r| f(&r.filter_status)).count();
    println!(
        "{} records: {} accepted, {} truncated, {} rejected",
        records.len(),
        count(|f| matches!(f, FilterStatus::Accepted)),
        count(|f| matches!(f, FilterStatus::Truncated { .. })),
        count(|f| matches!(f, FilterStatus::Rejected { .. })),
    );
    s.finish(&a.out, std::slice::from_ref(&a.out))
}

fn cmd_pretrain(s: &mut Session<'_>, a: &PretrainArgs) -> Result<()> {
    let images = load_images(s, &a.images)?;
    let items = read_items(&s.input(&a.items))?;
    let init = load_encoder(s, &a.init)?;
    let captions: Vec<(String, String)> = items.iter().map(|i| (i.id.clone(), i.caption.clone())).collect();
    let (params, log) = fit_captions(init, &captions, &images, &s.cfg.pretrain_config())?;
    checkpoint::save(&params, &a.out)?;
    let log_file = log_path(&a.out);
    write_jsonl(&log_file, &log.epochs)?;
    print_log(&log);
    s.finish(&a.out, &[a.out.clone(), log_file])
}

fn cmd_train(s: &mut Session<'_>, a: &TrainArgs) -> Result<()> {
    let images = load_images(s, &a.images)?;
    let records: Vec<ComparisonRecord> = read_jsonl(&s.input(&a.records))?;
    let init = load_encoder(s, &a.init)?;
    let (params, log) = fit(init, &records, &images, &s.cfg.train_config())?;
    checkpoint::save(&params, &a.out)?;
    let log_file = log_path(&a.out);
    write_jsonl(&log_file, &log.epochs)?;
    print_log(&log);
    if log.skipped_zero_difference > 0 {
        println!("skipped {} pairs with identical image embeddings", log.skipped_zero_difference);
    }
    s.finish(&a.out, &[a.out.clone(), log_file])
}

fn cmd_ensemble(s: &mut Session<'_>, a: &EnsembleArgs) -> Result<()> {
    let p1 = checkpoint::load(s.input(&a.a))?;
    let p2 = checkpoint::load(s.input(&a.b))?;
    checkpoint::save(&ensemble_weights(&p1, &p2)?, &a.out)?;
    println!("wrote {}", a.out.display());
    s.finish(&a.out, std::slice::from_ref(&a.out))
}

fn write_report<T: Serialize>(s: &Session<'_>, out: &Option<PathBuf>, report: &T) -> Result<()> {
    if let Some(out) = out {
        write_json(out, report)?;
        s.finish(out, std::slice::from_ref(out))?;
    }
    Ok(())
}

fn cmd_eval_zeroshot(s: &mut Session<'_>, a: &ZeroshotArgs) -> Result<()> {
    let images = load_images(s, &a.images)?;
    let encoder = load_encoder(s, &a.encoder.checkpoint)?;
    let bank = load_bank(s, &a.prompts, &encoder)?;
    let labels: Vec<LabelLine> = read_jsonl(&s.input(&a.labels))?;
    let (embs, idx) = labelled_images(&labels, &images, &bank)?;
    let res = eval_zeroshot(&embs, &idx, &bank)?;
    let mut report = crate::eval::EvalReport::from_accuracies("zeroshot", vec![s.cfg.seed], vec![res.accuracy])?;
    report.class_names = bank.class_names();
    report.confusion = Some(res.confusion);
    println!("zeroshot accuracy {:.2}% over {} images", res.accuracy * 100.0, embs.len());
    write_report(s, &a.out, &report)
}

fn group_ids(items: &[ItemRecord], value: &str) -> Vec<String> {
    items.iter().filter(|i| i.attributes.iter().any(|v| v == value)).map(|i| i.id.clone()).collect()
}

fn cmd_eval_diff(s: &mut Session<'_>, a: &EvalDiffArgs) -> Result<()> {
    let images = load_images(s, &a.images)?;
    let encoder = load_encoder(s, &a.encoder.checkpoint)?;
    let held: HashSet<String> = match &a.holdout {
        Some(p) => {
            let recs: Vec<ComparisonRecord> = read_jsonl(&s.input(p))?;
            recs.into_iter().flat_map(|r| [r.id_a, r.id_b]).collect()
        }
        None => HashSet::new(),
    };
    let style = s.cfg.eval.style;
    let items: Vec<ItemRecord> = match &a.items {
        Some(p) => read_items(&s.input(p))?.into_iter().filter(|i| !held.contains(&i.id)).collect(),
        None => Vec::new(),
    };
    let need_items = |what: &str| Error::Config(format!("{what} style needs --items"));
    let records: Vec<ComparisonRecord>;
    let (group_a, group_b): (Vec<String>, Vec<String>);
    let source = match style {
        TaskStyle::Attribute => {
            if a.items.is_none() {
                return Err(need_items("attribute"));
            }
            TaskSource::Attributes { items: &items, excluded: &s.cfg.eval.exclude }
        }
        TaskStyle::Size | TaskStyle::Color => {
            (group_a, group_b) = match (&a.group_a, &a.group_b) {
                (Some(ga), Some(gb)) => {
                    let keep = |v: Vec<String>| v.into_iter().filter(|id| !held.contains(id)).collect::<Vec<_>>();
                    (keep(read_ids(&s.input(ga))?), keep(read_ids(&s.input(gb))?))
                }
                (None, None) => {
                    if a.items.is_none() {
                        return Err(Error::Config("size and color styles need --items or --group-a/--group-b".into()));
                    }
                    let (va, vb) = if style == TaskStyle::Size { ("large", "small") } else { ("yellow", "blue") };
                    (group_ids(&items, va), group_ids(&items, vb))
                }
                _ => return Err(Error::Config("--group-a and --group-b must be given together".into())),
            };
            TaskSource::Groups { group_a: &group_a, group_b: &group_b }
        }
        TaskStyle::Llm => {
            let p = a.records.as_ref().ok_or_else(|| Error::Config("llm style needs --records".into()))?;
            records = read_jsonl::<ComparisonRecord>(&s.input(p))?
                .into_iter()
                .filter(|r| !held.contains(&r.id_a) && !held.contains(&r.id_b))
                .collect();
            TaskSource::Records(&records)
        }
    };
    let tasks = s
        .cfg
        .eval_seeds()
        .into_iter()
        .map(|seed| build_difference_task(style, &source, seed, s.cfg.eval.n_pairs))
        .collect::<Result<Vec<_>>>()?;
    let mut report = eval_difference(&tasks, &images, &encoder)?;
    report.label = a.label.clone();
    let dataset = format!("{style:?}").to_lowercase();
    print!("{}", render_table(&[(a.label.clone(), dataset, report.mean, report.stderr)]));
    write_report(s, &a.out, &report)
}

fn cmd_comp_prompt(s: &mut Session<'_>, a: &CompPromptArgs) -> Result<()> {
    let images = load_images(s, &a.images)?;
    let encoder = load_encoder(s, &a.encoder.checkpoint)?;
    let bank = load_bank(s, &a.prompts, &encoder)?;
    let diffs = load_diffs(s, &a.diffs, &encoder)?;
    let test_lines: Vec<LabelLine> = read_jsonl(&s.input(&a.labels))?;
    let test = labelled_images(&test_lines, &images, &bank)?;
    let selection = match s.cfg.eval.split {
        Split::Validation => {
            let p = a
                .validation_labels
                .as_ref()
                .ok_or_else(|| Error::Config("validation split needs --validation-labels (or --split test)".into()))?;
            let lines: Vec<LabelLine> = read_jsonl(&s.input(p))?;
            labelled_images(&lines, &images, &bank)?
        }
        Split::Test => test.clone(),
    };
    let report = eval_comparative(
        &bank,
        &diffs,
        (&selection.0, &selection.1),
        (&test.0, &test.1),
        s.cfg.eval.top_k,
        s.cfg.eval.alpha,
    )?;
    for (x, y) in &report.pairs {
        println!("updated pair {x} / {y}");
    }
    println!(
        "accuracy {:.2}% -> {:.2}%, pair-restricted {:.2}% -> {:.2}% (alpha {})",
        report.accuracy_before * 100.0,
        report.accuracy_after * 100.0,
        report.pair_accuracy_before * 100.0,
        report.pair_accuracy_after * 100.0,
        report.alpha
    );
    write_report(s, &a.out, &report)
}

fn cmd_localize(s: &mut Session<'_>, a: &LocalizeArgs) -> Result<()> {
    let encoder = load_encoder(s, &a.encoder.checkpoint)?;
    let bank = load_bank(s, &a.prompts, &encoder)?;
    let mut diffs = load_diffs(s, &a.diffs, &encoder)?;
    if let (Some(img), Some(lab)) = (&a.images, &a.labels) {
        let images = load_images(s, img)?;
        let lines: Vec<LabelLine> = read_jsonl(&s.input(lab))?;
        let (embs, idx) = labelled_images(&lines, &images, &bank)?;
        let confusion = eval_zeroshot(&embs, &idx, &bank)?.confusion;
        let keep: HashSet<(String, String)> = select_confused_pairs(&confusion, s.cfg.eval.top_k)?
            .into_iter()
            .flat_map(|(x, y)| {
                let (cx, cy) = (bank.entries[x].class.clone(), bank.entries[y].class.clone());
                [(cx.clone(), cy.clone()), (cy, cx)]
            })
            .collect();
        diffs.retain(|d| keep.contains(&(d.class_b.clone(), d.class_a.clone())));
    }
    let summary = LocalizationSummary::from_rows(localization_report(&bank, &diffs)?)?;
    println!(
        "{} differences: mean d_fwd {:.4}, mean d_rev {:.4}",
        summary.rows.len(),
        summary.mean_d_fwd,
        summary.mean_d_rev
    );
    write_report(s, &a.out, &summary)
}
