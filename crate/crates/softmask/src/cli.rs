//! Command-line surface. One binary, seven subcommands, reproducible
//! runs: every training/eval command writes a manifest holding the
//! resolved configuration, the seed, SHA-256 hashes of its inputs, and
//! the resulting metrics.
//!
//! Option precedence: command-line flag > config-file entry > built-in
//! default. The config file is line-oriented `key = <JSON value>`;
//! keys are the long flag names with `-` replaced by `_`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::datagen::{
    corrupt_corpus, load_pairs_jsonl, save_lines, save_pairs_jsonl, ConfusionTable,
    CorruptionPolicy, ExamplePair, GrammarSpec,
};
use crate::eval::{
    default_ablation, evaluate, lambda_sweep, render_table, run_ablation, MetricsReport,
    DEFAULT_LAMBDA_GRID,
};
use crate::model::{MaskingMode, ModelConfig, SoftMaskModel};
use crate::train::{finetune, mlm_pretrain, Checkpoint, TrainConfig};
use crate::vocab::Vocabulary;

/// Usage errors exit 2, anything else 1.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "softmask", version, about = "Spelling correction with a soft-masked detector–corrector model")]
struct Cli {
    /// RNG seed for the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config file with `key = <JSON>` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a toy corpus, confusion table, and corrupted pair files.
    Synth(SynthArgs),
    /// Masked-language-model pretraining of the corrector on clean text.
    Pretrain(PretrainArgs),
    /// End-to-end fine-tuning of the joint detection+correction loss.
    Train(TrainArgs),
    /// Score a checkpoint on held-out pairs.
    Eval(EvalArgs),
    /// Train and score every masking-mode ablation row.
    Ablate(AblateArgs),
    /// Train once per λ and report the best by correction F1.
    Sweep(SweepArgs),
    /// Correct text line by line from stdin to stdout.
    Predict(PredictArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Training sentence count.
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long)]
    dev_sentences: Option<usize>,
    #[arg(long)]
    test_sentences: Option<usize>,
    /// Per-position replacement probability.
    #[arg(long)]
    replace_rate: Option<f64>,
    /// Fraction of replacements drawn from the confusion table.
    #[arg(long)]
    confusion_share: Option<f64>,
    /// Replace an exact count of positions instead of Bernoulli draws.
    #[arg(long)]
    exact_count: bool,
    /// Fewest confusion-table substitutes per character.
    #[arg(long)]
    min_subs: Option<usize>,
    /// Most confusion-table substitutes per character.
    #[arg(long)]
    max_subs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Clean corpus, one sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Checkpoint output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training pairs (JSON lines).
    #[arg(long)]
    train: PathBuf,
    /// Dev pairs for per-epoch scoring and best-model selection.
    #[arg(long)]
    dev: PathBuf,
    /// Clean corpus for vocabulary construction (unless --init-from).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Start from an existing checkpoint instead of fresh parameters.
    #[arg(long)]
    init_from: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Drop error-free pairs from the training set.
    #[arg(long)]
    filter_unchanged: bool,
    /// Checkpoint output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint to score.
    #[arg(long)]
    model: PathBuf,
    /// Pairs to score against (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Masking-mode override (defaults to the checkpoint's mode).
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    init_from: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Comma-separated λ grid, e.g. `0.2,0.5,0.8,1.0`.
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint to run.
    #[arg(long)]
    model: PathBuf,
    /// Append tab-separated error probabilities to each output line.
    #[arg(long)]
    probs: bool,
}

// ---------------------------------------------------------------------
// config file + option resolution

#[derive(Default)]
struct FileConfig(BTreeMap<String, serde_json::Value>);

impl FileConfig {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(usage(format!(
                    "--config {} line {}: expected `key = value`",
                    path.display(),
                    i + 1
                )));
            };
            let parsed: serde_json::Value = serde_json::from_str(value.trim()).map_err(|e| {
                usage(format!(
                    "--config {} line {}: bad JSON value: {e}",
                    path.display(),
                    i + 1
                ))
            })?;
            map.insert(key.trim().to_string(), parsed);
        }
        Ok(FileConfig(map))
    }

    fn get<T: serde::de::DeserializeOwned>(&self, key: &str) -> CliResult<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| usage(format!("config key {key}: {e}"))),
        }
    }
}

/// flag > file, where absence is meaningful.
fn resolve_opt<T: serde::de::DeserializeOwned>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
) -> CliResult<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

/// flag > file > default.
fn resolve<T: serde::de::DeserializeOwned>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
    default: T,
) -> CliResult<T> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.get(key)?.unwrap_or(default)),
    }
}

fn parse_mode(name: &str, threshold: Option<f64>) -> CliResult<MaskingMode> {
    match name {
        "soft" => Ok(MaskingMode::Soft),
        "hard" => Ok(MaskingMode::Hard {
            threshold: threshold.unwrap_or(0.9),
        }),
        "random" => Ok(MaskingMode::Random),
        "none" => Ok(MaskingMode::NoDetector),
        "force" => Ok(MaskingMode::ForceOracle),
        other => Err(usage(format!(
            "--mode {other}: expected one of soft, hard, random, none, force"
        ))),
    }
}

/// Model shape from config-file keys, desk defaults otherwise.
fn model_config_from_file(file: &FileConfig, vocab_size: usize) -> CliResult<ModelConfig> {
    let base = ModelConfig::desk_default(vocab_size);
    Ok(ModelConfig {
        vocab_size,
        width: file.get("width")?.unwrap_or(base.width),
        encoder_layers: file.get("encoder_layers")?.unwrap_or(base.encoder_layers),
        heads: file.get("heads")?.unwrap_or(base.heads),
        ffn_width: file.get("ffn_width")?.unwrap_or(base.ffn_width),
        gru_hidden: file.get("gru_hidden")?.unwrap_or(base.gru_hidden),
        l_max: file.get("l_max")?.unwrap_or(base.l_max),
        lambda: base.lambda,
        mode: base.mode,
        residual_connection: file
            .get("residual_connection")?
            .unwrap_or(base.residual_connection),
    })
}

// ---------------------------------------------------------------------
// manifests

#[derive(Serialize)]
struct Manifest {
    command: String,
    seed: u64,
    config: serde_json::Value,
    /// SHA-256 of every input file.
    inputs: BTreeMap<String, String>,
    metrics: serde_json::Value,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

fn hash_inputs(paths: &[&Path]) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        out.insert(p.display().to_string(), sha256_file(p)?);
    }
    Ok(out)
}

fn write_manifest(out: &Path, manifest: &Manifest) -> CliResult<()> {
    let path = out.with_extension("manifest.json");
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, json)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    println!("manifest: {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------
// shared loading

fn load_vocab_and_model(
    init_from: Option<&Path>,
    corpus: Option<&Path>,
    file: &FileConfig,
    seed: u64,
) -> CliResult<(SoftMaskModel, Vocabulary)> {
    if let Some(path) = init_from {
        let ckpt = Checkpoint::load(path)?;
        let (model, vocab) = ckpt.restore_model()?;
        return Ok((model, vocab));
    }
    let corpus =
        corpus.ok_or_else(|| usage("either --init-from or --corpus is required"))?;
    let lines = crate::datagen::load_lines(corpus)?;
    let vocab = Vocabulary::build(&lines)?;
    let config = model_config_from_file(file, vocab.size())?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SoftMaskModel::new(config, &mut rng)?;
    Ok((model, vocab))
}

fn load_pairs(path: &Path, vocab: &Vocabulary) -> CliResult<Vec<ExamplePair>> {
    Ok(load_pairs_jsonl(path, vocab)?)
}

fn train_config(
    lr: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    filter_unchanged: bool,
    file: &FileConfig,
    seed: u64,
) -> CliResult<TrainConfig> {
    let base = TrainConfig::desk_default(seed);
    let tc = TrainConfig {
        lr: resolve(lr, file, "lr", base.lr)?,
        batch_size: resolve(batch_size, file, "batch_size", base.batch_size)?,
        epochs: resolve(epochs, file, "epochs", base.epochs)?,
        seed,
        filter_unchanged: filter_unchanged
            || file.get("filter_unchanged")?.unwrap_or(false),
    };
    tc.validate().map_err(|e| usage(e.to_string()))?;
    Ok(tc)
}

// ---------------------------------------------------------------------
// subcommands

fn cmd_synth(a: SynthArgs, file: &FileConfig, seed: u64) -> CliResult<()> {
    let sentences = resolve(a.sentences, file, "sentences", 2000)?;
    let dev = resolve(a.dev_sentences, file, "dev_sentences", 200)?;
    let test = resolve(a.test_sentences, file, "test_sentences", 200)?;
    let replace_rate = resolve(a.replace_rate, file, "replace_rate", 0.15)?;
    let confusion_share = resolve(a.confusion_share, file, "confusion_share", 0.8)?;
    let out = resolve(a.out, file, "out", PathBuf::from("data"))?;
    if sentences == 0 {
        return Err(usage("--sentences must be positive"));
    }
    let policy = CorruptionPolicy {
        replace_rate,
        confusion_share,
        random_share: 1.0 - confusion_share,
        seed,
        exact_count: a.exact_count || file.get("exact_count")?.unwrap_or(false),
    };
    policy.validate().map_err(|e| {
        usage(format!("--replace-rate/--confusion-share: {e}"))
    })?;

    let spec = GrammarSpec::default_toy();
    let all = crate::datagen::synth_corpus(sentences + dev + test, &spec, seed)?;
    let vocab = Vocabulary::build(&all)?;
    let min_subs = resolve(a.min_subs, file, "min_subs", 1)?;
    let max_subs = resolve(a.max_subs, file, "max_subs", 4)?;
    if min_subs == 0 || max_subs < min_subs {
        return Err(usage("--min-subs/--max-subs: need 1 <= min <= max"));
    }
    let mut table_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ab1e);
    let table = ConfusionTable::synthesize(&vocab, min_subs, max_subs, &mut table_rng);

    fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let corpus_path = out.join("corpus.txt");
    save_lines(&corpus_path, &all)?;
    let table_path = out.join("confusion.tsv");
    table.save_tsv(&table_path, &vocab)?;

    let encoded: Vec<Vec<usize>> = all.iter().map(|s| vocab.encode(s)).collect();
    let mut stats_total = crate::datagen::CorruptionStats::default();
    let splits: [(&str, &[Vec<usize>]); 3] = [
        ("train.jsonl", &encoded[..sentences]),
        ("dev.jsonl", &encoded[sentences..sentences + dev]),
        ("test.jsonl", &encoded[sentences + dev..]),
    ];
    for (name, split) in splits {
        if split.is_empty() {
            continue;
        }
        let (pairs, stats) = corrupt_corpus(split, vocab.size(), &table, &policy)?;
        stats_total += stats;
        save_pairs_jsonl(&out.join(name), &pairs, &vocab)?;
    }
    println!(
        "sentences: {} train / {dev} dev / {test} test",
        sentences
    );
    println!(
        "corruption: {} of {} eligible positions replaced ({} confusion table, {} random, {} fallbacks)",
        stats_total.replaced,
        stats_total.eligible,
        stats_total.from_table,
        stats_total.from_random,
        stats_total.table_fallbacks
    );
    let manifest = Manifest {
        command: "synth".into(),
        seed,
        config: serde_json::json!({
            "sentences": sentences, "dev_sentences": dev, "test_sentences": test,
            "replace_rate": replace_rate, "confusion_share": confusion_share,
            "exact_count": policy.exact_count, "min_subs": min_subs, "max_subs": max_subs,
        }),
        inputs: BTreeMap::new(),
        metrics: serde_json::json!({
            "eligible": stats_total.eligible,
            "replaced": stats_total.replaced,
            "from_table": stats_total.from_table,
            "from_random": stats_total.from_random,
        }),
    };
    write_manifest(&out.join("synth"), &manifest)
}

fn cmd_pretrain(a: PretrainArgs, file: &FileConfig, seed: u64) -> CliResult<()> {
    let steps = resolve(a.steps, file, "steps", 1000)?;
    let batch_size = resolve(a.batch_size, file, "batch_size", 32)?;
    let lr = resolve(a.lr, file, "lr", 1e-3)?;
    let out = resolve(a.out, file, "out", PathBuf::from("pretrained.ckpt"))?;
    let lines = crate::datagen::load_lines(&a.corpus)?;
    let vocab = Vocabulary::build(&lines)?;
    let config = model_config_from_file(file, vocab.size())?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = SoftMaskModel::new(config, &mut rng)?;
    let sentences: Vec<Vec<usize>> = lines
        .iter()
        .map(|s| vocab.encode(s))
        .filter(|s| !s.is_empty() && s.len() <= model.config.l_max)
        .collect();
    let losses = mlm_pretrain(&mut model, &sentences, steps, batch_size, lr, seed)?;
    println!(
        "pretrained {steps} steps: loss {:.4} -> {:.4}",
        losses.first().unwrap(),
        losses.last().unwrap()
    );
    Checkpoint::of_model(&model, &vocab, seed).save(&out)?;
    println!("checkpoint: {}", out.display());
    let manifest = Manifest {
        command: "pretrain".into(),
        seed,
        config: serde_json::json!({
            "steps": steps, "batch_size": batch_size, "lr": lr,
            "model": model.config,
        }),
        inputs: hash_inputs(&[&a.corpus])?,
        metrics: serde_json::json!({
            "initial_loss": losses.first(),
            "final_loss": losses.last(),
        }),
    };
    write_manifest(&out, &manifest)
}

fn cmd_train(a: TrainArgs, file: &FileConfig, seed: u64) -> CliResult<()> {
    let out = resolve(a.out, file, "out", PathBuf::from("model.ckpt"))?;
    let (mut model, vocab) =
        load_vocab_and_model(a.init_from.as_deref(), a.corpus.as_deref(), file, seed)?;
    let mode_name = resolve(a.mode, file, "mode", "soft".to_string())?;
    model.config.mode = parse_mode(&mode_name, a.threshold.or(file.get("threshold")?))?;
    model.config.lambda = resolve(a.lambda, file, "lambda", model.config.lambda)?;
    model.config.validate().map_err(|e| usage(e.to_string()))?;
    let tc = train_config(a.lr, a.batch_size, a.epochs, a.filter_unchanged, file, seed)?;
    let train_pairs = load_pairs(&a.train, &vocab)?;
    let dev_pairs = load_pairs(&a.dev, &vocab)?;
    let report = finetune(&mut model, &train_pairs, &dev_pairs, &tc)?;
    for e in &report.history {
        println!(
            "epoch {}: train loss {:.4}, dev correction F1 {:.4}",
            e.epoch, e.mean_train_loss, e.dev.correction.f1
        );
    }
    println!(
        "best epoch {} with dev correction F1 {:.4}",
        report.best_epoch, report.best_correction_f1
    );
    Checkpoint::of_model(&report.best_model, &vocab, seed).save(&out)?;
    println!("checkpoint: {}", out.display());
    let mut inputs: Vec<&Path> = vec![&a.train, &a.dev];
    if let Some(p) = &a.init_from {
        inputs.push(p);
    }
    if let Some(p) = &a.corpus {
        inputs.push(p);
    }
    let manifest = Manifest {
        command: "train".into(),
        seed,
        config: serde_json::json!({
            "model": report.best_model.config,
            "train": tc,
        }),
        inputs: hash_inputs(&inputs)?,
        metrics: serde_json::json!({
            "best_epoch": report.best_epoch,
            "dev": report.history[report.best_epoch].dev,
        }),
    };
    write_manifest(&out, &manifest)
}

fn cmd_eval(a: EvalArgs, file: &FileConfig, seed: u64) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let (mut model, vocab) = ckpt.restore_model()?;
    if let Some(name) = resolve_opt(a.mode, file, "mode")? {
        model.config.mode = parse_mode(&name, a.threshold.or(file.get("threshold")?))?;
        model.config.validate().map_err(|e| usage(e.to_string()))?;
    }
    let pairs = load_pairs(&a.data, &vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = evaluate(&model, &pairs, &mut rng)?;
    print!("{}", render_table(&[(report.mode.clone(), report.clone())]));
    let manifest = Manifest {
        command: "eval".into(),
        seed,
        config: serde_json::json!({ "model": model.config }),
        inputs: hash_inputs(&[&a.model, &a.data])?,
        metrics: serde_json::to_value(&report)?,
    };
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&report)?)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
        println!("report: {}", out.display());
        write_manifest(out, &manifest)?;
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs, file: &FileConfig, seed: u64) -> CliResult<()> {
    let (mut base, vocab) =
        load_vocab_and_model(a.init_from.as_deref(), a.corpus.as_deref(), file, seed)?;
    base.config.lambda = resolve(a.lambda, file, "lambda", base.config.lambda)?;
    let tc = train_config(a.lr, a.batch_size, a.epochs, false, file, seed)?;
    let train_pairs = load_pairs(&a.train, &vocab)?;
    let dev_pairs = load_pairs(&a.dev, &vocab)?;
    let test_pairs = load_pairs(&a.test, &vocab)?;
    let rows = default_ablation();
    let reports = run_ablation(&rows, &base, &train_pairs, &dev_pairs, &test_pairs, &tc)?;
    print!("{}", render_table(&reports));
    let manifest = Manifest {
        command: "ablate".into(),
        seed,
        config: serde_json::json!({ "model": base.config, "train": tc }),
        inputs: hash_inputs(&[&a.train, &a.dev, &a.test])?,
        metrics: serde_json::to_value(
            reports.iter().map(|(_, r)| r).collect::<Vec<_>>(),
        )?,
    };
    if let Some(out) = resolve_opt(a.out, file, "out")? {
        fs::write(&out, serde_json::to_string_pretty(&manifest.metrics)?)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
        write_manifest(&out, &manifest)?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs, file: &FileConfig, seed: u64) -> CliResult<()> {
    let (base, vocab) =
        load_vocab_and_model(a.init_from.as_deref(), a.corpus.as_deref(), file, seed)?;
    let grid: Vec<f64> = match resolve_opt(a.lambdas, file, "lambdas")? {
        None => DEFAULT_LAMBDA_GRID.to_vec(),
        Some(s) => s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| usage(format!("--lambdas: `{t}` is not a number")))
            })
            .collect::<CliResult<Vec<f64>>>()?,
    };
    let tc = train_config(a.lr, a.batch_size, a.epochs, false, file, seed)?;
    let train_pairs = load_pairs(&a.train, &vocab)?;
    let dev_pairs = load_pairs(&a.dev, &vocab)?;
    let test_pairs = load_pairs(&a.test, &vocab)?;
    let (rows, best) = lambda_sweep(&grid, &base, &train_pairs, &dev_pairs, &test_pairs, &tc)?;
    let named: Vec<(String, MetricsReport)> = rows
        .iter()
        .map(|(l, r)| (format!("lambda={l}"), r.clone()))
        .collect();
    print!("{}", render_table(&named));
    println!("best lambda by correction F1: {best}");
    let manifest = Manifest {
        command: "sweep".into(),
        seed,
        config: serde_json::json!({ "model": base.config, "train": tc, "grid": grid }),
        inputs: hash_inputs(&[&a.train, &a.dev, &a.test])?,
        metrics: serde_json::json!({
            "best_lambda": best,
            "rows": rows.iter().map(|(_, r)| r).collect::<Vec<_>>(),
        }),
    };
    if let Some(out) = resolve_opt(a.out, file, "out")? {
        fs::write(&out, serde_json::to_string_pretty(&manifest.metrics)?)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
        write_manifest(&out, &manifest)?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs, _file: &FileConfig, seed: u64) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let (model, vocab) = ckpt.restore_model()?;
    if model.config.mode == MaskingMode::ForceOracle {
        return Err(usage(
            "--model was trained in force-oracle mode, which needs gold labels; evaluate it with `eval` instead",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (i, line) in stdin.lock().lines().enumerate() {
        let line = line.map_err(|e| CliError::Runtime(format!("stdin: {e}")))?;
        if line.is_empty() {
            writeln!(out).map_err(|e| CliError::Runtime(e.to_string()))?;
            continue;
        }
        let ids = vocab.encode(&line);
        if ids.len() > model.config.l_max {
            return Err(CliError::Runtime(format!(
                "line {}: {} characters exceeds the model maximum {}",
                i + 1,
                ids.len(),
                model.config.l_max
            )));
        }
        let (corrected, probs) = model.predict(&ids, None, Some(&mut rng))?;
        // keep original characters wherever the model makes no change,
        // so out-of-vocabulary input survives verbatim
        let rendered: String = line
            .chars()
            .zip(corrected.iter().zip(&ids))
            .map(|(orig, (new, old))| if new == old { orig } else { vocab.char_of(*new).unwrap_or('\u{FFFD}') })
            .collect();
        if a.probs {
            let ps: Vec<String> = probs.iter().map(|p| format!("{p:.4}")).collect();
            writeln!(out, "{rendered}\t{}", ps.join("\t"))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        } else {
            writeln!(out, "{rendered}").map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------

/// Parse arguments, dispatch, and map errors onto the exit-code
/// contract. `main` passes the result straight to `process::exit`.
pub fn run() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter("SOFTMASK_LOG")).init();
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(0);
    let file = match FileConfig::load(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let result = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a, &file, seed),
        Cmd::Pretrain(a) => cmd_pretrain(a, &file, seed),
        Cmd::Train(a) => cmd_train(a, &file, seed),
        Cmd::Eval(a) => cmd_eval(a, &file, seed),
        Cmd::Ablate(a) => cmd_ablate(a, &file, seed),
        Cmd::Sweep(a) => cmd_sweep(a, &file, seed),
        Cmd::Predict(a) => cmd_predict(a, &file, seed),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}
