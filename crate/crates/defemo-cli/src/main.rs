//! `defemo` — command-line entry point wiring the library modules into
//! reproducible experiments.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! stdout is reserved for machine-readable output; logs go to stderr.

use clap::{Args, Parser, Subcommand};
use defemo::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use defemo::data::{
    self, build_aux_dataset, default_definitions, DefinitionTable, PrimaryExample,
};
use defemo::error::Error as DefemoError;
use defemo::eval::{self, InferenceMode, LabelSet};
use defemo::gradcheck;
use defemo::model::EncoderConfig;
use defemo::tokenizer::{self, Vocabulary};
use defemo::trainer::{self, DevSplit, Setup, TrainConfig};
use defemo::transfer::{self, Initializer, TargetDataset, TrainSize, TransferPlan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "defemo",
    version,
    about = "Multi-task fine-grained emotion classifier with definition modeling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the auxiliary definition dataset from a primary TSV.
    BuildAux(BuildAuxArgs),
    /// Train a model and write a checkpoint plus a JSONL log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labelled TSV split.
    Evaluate(EvaluateArgs),
    /// Predict label sets for texts, one per input line.
    Predict(PredictArgs),
    /// Run the transfer sweep over train sizes and random splits.
    Transfer(TransferArgs),
    /// Run the finite-difference gradient-check suite.
    Gradcheck(GradcheckArgs),
    /// Report dataset label distribution statistics.
    Stats(StatsArgs),
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct CommonArgs {
    /// Seed for all randomized behavior; identical invocations are
    /// bitwise-reproducible.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed worker count, declared for reproducibility.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Optional TOML config file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BuildAuxArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Primary dataset TSV (text<TAB>comma-separated label ids<TAB>id).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Definitions TSV (label name<TAB>definition); defaults to the bundled
    /// GoEmotions table.
    #[arg(long)]
    definitions: Option<PathBuf>,
    /// Output TSV path (text<TAB>definition label<TAB>relation).
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    train: Option<PathBuf>,
    /// Optional labelled dev TSV evaluated after each epoch.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    definitions: Option<PathBuf>,
    /// Existing vocabulary file; if absent one is built from the training
    /// corpus and saved next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Where to save a freshly built vocabulary (default: <output>.vocab).
    #[arg(long)]
    save_vocab: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    output: PathBuf,
    /// JSONL training log path (default: <output>.log.jsonl).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Training setup: classification_only | cdp | mlm | cdp_mlm.
    #[arg(long)]
    setup: Option<Setup>,
    /// Bernoulli probability of sampling a primary step.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Multi-label decision threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Weight of the MLM loss inside the combined CDP+MLM loss.
    #[arg(long)]
    mlm_weight: Option<f64>,
    /// Rebuild the auxiliary dataset with fresh negatives each epoch.
    #[arg(long)]
    resample_aux_per_epoch: bool,
    /// Skip MLM masking on IsNotDefinition instances in the CDP+MLM setup.
    #[arg(long)]
    no_mlm_on_negatives: bool,
    /// Append a trailing [SEP] to text+definition pairs.
    #[arg(long)]
    trailing_sep: bool,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Args)]
struct EncoderArgs {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    ff: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Labelled TSV split to evaluate.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    definitions: Option<PathBuf>,
    /// Decision threshold (default: the checkpoint's training threshold).
    #[arg(long)]
    threshold: Option<f64>,
    /// Inference mode: threshold | argmax.
    #[arg(long, default_value = "threshold")]
    mode: String,
    /// Output format: json | csv.
    #[arg(long, default_value = "json")]
    format: String,
    /// Split name recorded in the report.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Input text file, one text per line; "-" reads stdin.
    #[arg(long, default_value = "-")]
    input: String,
    #[arg(long)]
    definitions: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Target dataset TSV (text<TAB>label name).
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    /// Source checkpoint whose backbone is transferred.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also run a fresh-weights baseline (implied when no checkpoint given).
    #[arg(long)]
    fresh: bool,
    /// Comma-separated train sizes; absolute counts or percentages
    /// (e.g. "100,200,500,80%").
    #[arg(long)]
    sizes: Option<String>,
    /// Random splits per train size.
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Optional CSV copy of the report.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Dataset name recorded in the report.
    #[arg(long, default_value = "target")]
    name: String,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Failure tolerance on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    definitions: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Optional TOML config file; unknown keys are rejected, flags override.

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    encoder: Option<EncoderSection>,
    train: Option<TrainSection>,
    transfer: Option<TransferSection>,
    paths: Option<PathsSection>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderSection {
    num_layers: Option<usize>,
    num_heads: Option<usize>,
    hidden_dim: Option<usize>,
    ff_dim: Option<usize>,
    max_len: Option<usize>,
    dropout_rate: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    setup: Option<String>,
    primary_prob: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    threshold: Option<f64>,
    mlm_weight: Option<f64>,
    resample_aux_per_epoch: Option<bool>,
    mlm_on_negatives: Option<bool>,
    trailing_sep: Option<bool>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransferSection {
    sizes: Option<Vec<String>>,
    splits: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsSection {
    train: Option<PathBuf>,
    dev: Option<PathBuf>,
    definitions: Option<PathBuf>,
    target: Option<PathBuf>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::data(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::usage(format!("invalid config {}: {e}", p.display())))
        }
    }
}

// ---------------------------------------------------------------------------
// Error-to-exit-code mapping.

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }
    fn data(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: message.into() }
    }
    fn numeric(message: impl Into<String>) -> Self {
        CliError { code: EXIT_NUMERIC, message: message.into() }
    }
}

impl From<DefemoError> for CliError {
    fn from(e: DefemoError) -> Self {
        let code = match &e {
            DefemoError::Numeric { .. } | DefemoError::Shape { .. } => EXIT_NUMERIC,
            DefemoError::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::BuildAux(a) => cmd_build_aux(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

// ---------------------------------------------------------------------------
// Shared helpers.

fn check_threads(common: &CommonArgs) -> Result<(), CliError> {
    if common.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    Ok(())
}

fn load_definitions(path: Option<&Path>) -> Result<DefinitionTable, CliError> {
    match path {
        Some(p) => Ok(data::load_definitions(p)?),
        None => Ok(default_definitions()),
    }
}

fn load_primary(path: &Path, num_labels: usize) -> Result<Vec<PrimaryExample>, CliError> {
    Ok(data::load_primary_tsv(path, num_labels)?)
}

fn required_path(flag: Option<PathBuf>, fallback: Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or(fallback)
        .ok_or_else(|| CliError::usage(format!("missing required --{name} (or config [paths] entry)")))
}

fn read_lines(source: &str) -> Result<Vec<String>, CliError> {
    let lines: Vec<String> = if source == "-" {
        std::io::stdin().lock().lines().collect::<Result<_, _>>()?
    } else {
        BufReader::new(fs::File::open(source)?).lines().collect::<Result<_, _>>()?
    };
    Ok(lines.into_iter().filter(|l| !l.trim().is_empty()).collect())
}

fn parse_mode(mode: &str) -> Result<InferenceMode, CliError> {
    match mode {
        "threshold" => Ok(InferenceMode::Threshold),
        "argmax" => Ok(InferenceMode::Argmax),
        other => Err(CliError::usage(format!("unknown inference mode '{other}'"))),
    }
}

fn resolve_encoder(args: &EncoderArgs, section: Option<&EncoderSection>, vocab_size: usize, num_labels: usize) -> EncoderConfig {
    let base = EncoderConfig::desk(vocab_size, num_labels);
    let sec = section.cloned_or_default();
    EncoderConfig {
        num_layers: args.layers.or(sec.num_layers).unwrap_or(base.num_layers),
        num_heads: args.heads.or(sec.num_heads).unwrap_or(base.num_heads),
        hidden_dim: args.hidden.or(sec.hidden_dim).unwrap_or(base.hidden_dim),
        ff_dim: args.ff.or(sec.ff_dim).unwrap_or(base.ff_dim),
        max_len: args.max_len.or(sec.max_len).unwrap_or(base.max_len),
        dropout_rate: args.dropout.or(sec.dropout_rate).unwrap_or(base.dropout_rate),
        ..base
    }
}

trait ClonedOrDefault {
    type Out;
    fn cloned_or_default(self) -> Self::Out;
}

impl ClonedOrDefault for Option<&EncoderSection> {
    type Out = EncoderSection;
    fn cloned_or_default(self) -> EncoderSection {
        match self {
            Some(s) => EncoderSection {
                num_layers: s.num_layers,
                num_heads: s.num_heads,
                hidden_dim: s.hidden_dim,
                ff_dim: s.ff_dim,
                max_len: s.max_len,
                dropout_rate: s.dropout_rate,
            },
            None => EncoderSection::default(),
        }
    }
}

fn load_dev_split(path: Option<&Path>, num_labels: usize) -> Result<Option<DevSplit>, CliError> {
    match path {
        None => Ok(None),
        Some(p) => {
            let examples = load_primary(p, num_labels)?;
            Ok(Some(DevSplit {
                texts: examples.iter().map(|e| e.text.clone()).collect(),
                golds: examples.iter().map(|e| e.labels.clone()).collect(),
            }))
        }
    }
}

// ---------------------------------------------------------------------------
// Subcommands.

fn cmd_build_aux(args: BuildAuxArgs) -> Result<(), CliError> {
    check_threads(&args.common)?;
    let file_cfg = load_file_config(args.common.config.as_deref())?;
    let paths = file_cfg.paths.unwrap_or_default();
    let defs_path = args.definitions.or(paths.definitions);
    let defs = load_definitions(defs_path.as_deref())?;
    let train_path = required_path(args.train, paths.train, "train")?;
    let examples = load_primary(&train_path, defs.num_labels())?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.common.seed);
    let aux = build_aux_dataset(&examples, &defs, &mut rng)?;

    let mut out = String::new();
    for inst in &aux {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            inst.text,
            defs.name(inst.def_label),
            inst.relation.as_str()
        ));
    }
    fs::write(&args.output, out)?;
    println!(
        "{}",
        serde_json::json!({
            "output": args.output,
            "instances": aux.len(),
            "primary_examples": examples.len(),
        })
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    check_threads(&args.common)?;
    let file_cfg = load_file_config(args.common.config.as_deref())?;
    let paths = file_cfg.paths.unwrap_or_default();
    let train_sec = file_cfg.train.unwrap_or_default();

    let defs_path = args.definitions.or(paths.definitions);
    let defs = load_definitions(defs_path.as_deref())?;
    let train_path = required_path(args.train, paths.train, "train")?;
    let examples = load_primary(&train_path, defs.num_labels())?;
    let dev_path = args.dev.or(paths.dev);
    let dev = load_dev_split(dev_path.as_deref(), defs.num_labels())?;

    let setup = match (&args.setup, &train_sec.setup) {
        (Some(s), _) => *s,
        (None, Some(name)) => name
            .parse::<Setup>()
            .map_err(|e| CliError::usage(format!("config train.setup: {e}")))?,
        (None, None) => TrainConfig::default().setup,
    };
    let defaults = TrainConfig::default();
    let train_config = TrainConfig {
        setup,
        primary_prob: args.p.or(train_sec.primary_prob).unwrap_or(defaults.primary_prob),
        epochs: args.epochs.or(train_sec.epochs).unwrap_or(defaults.epochs),
        batch_size: args.batch_size.or(train_sec.batch_size).unwrap_or(defaults.batch_size),
        learning_rate: args
            .learning_rate
            .or(train_sec.learning_rate)
            .unwrap_or(defaults.learning_rate),
        threshold: args.threshold.or(train_sec.threshold).unwrap_or(defaults.threshold),
        seed: args.common.seed,
        resample_aux_per_epoch: args.resample_aux_per_epoch
            || train_sec.resample_aux_per_epoch.unwrap_or(defaults.resample_aux_per_epoch),
        mlm_on_negatives: if args.no_mlm_on_negatives {
            false
        } else {
            train_sec.mlm_on_negatives.unwrap_or(defaults.mlm_on_negatives)
        },
        trailing_sep: args.trailing_sep || train_sec.trailing_sep.unwrap_or(defaults.trailing_sep),
        mlm_weight: args.mlm_weight.or(train_sec.mlm_weight).unwrap_or(defaults.mlm_weight),
    };

    // Vocabulary: load if given, otherwise build from texts + definitions.
    let vocab = match &args.vocab {
        Some(p) => Vocabulary::load(BufReader::new(fs::File::open(p)?))?,
        None => {
            let mut corpus: Vec<String> = examples.iter().map(|e| e.text.clone()).collect();
            for l in 0..defs.num_labels() {
                corpus.push(defs.definition(l).to_string());
            }
            let vocab = tokenizer::build_vocab(corpus.iter(), 1, 30_000)?;
            let vocab_path = args
                .save_vocab
                .clone()
                .unwrap_or_else(|| with_suffix(&args.output, ".vocab"));
            let mut f = fs::File::create(&vocab_path)?;
            vocab.save(&mut f)?;
            eprintln!("built vocabulary of {} tokens -> {}", vocab.len(), vocab_path.display());
            vocab
        }
    };

    let encoder_config =
        resolve_encoder(&args.encoder, file_cfg.encoder.as_ref(), vocab.len(), defs.num_labels());

    let mut rng = ChaCha8Rng::seed_from_u64(args.common.seed ^ 0x617578);
    let aux = build_aux_dataset(&examples, &defs, &mut rng)?;

    eprintln!(
        "training setup={} p={} epochs={} on {} primary / {} auxiliary examples",
        setup.label(),
        train_config.primary_prob,
        train_config.epochs,
        examples.len(),
        aux.len()
    );
    let outcome =
        trainer::train(&train_config, &encoder_config, &examples, &aux, &defs, &vocab, dev.as_ref())?;

    save_checkpoint(&args.output, &outcome.checkpoint)?;
    let log_path = args.log.clone().unwrap_or_else(|| with_suffix(&args.output, ".log.jsonl"));
    let mut log_file = fs::File::create(&log_path)?;
    for entry in &outcome.log {
        writeln!(log_file, "{}", serde_json::to_string(entry).map_err(|e| CliError::data(e.to_string()))?)?;
    }

    println!(
        "{}",
        serde_json::json!({
            "checkpoint": args.output,
            "log": log_path,
            "primary_steps": outcome.primary_steps,
            "auxiliary_steps": outcome.auxiliary_steps,
        })
    );
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    check_threads(&args.common)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let vocab = Vocabulary::load(BufReader::new(fs::File::open(&args.vocab)?))?;
    let num_labels = ckpt.encoder_config.num_labels;
    let defs = match &args.definitions {
        Some(p) => Some(data::load_definitions(p)?),
        None => {
            let bundled = default_definitions();
            (bundled.num_labels() == num_labels).then_some(bundled)
        }
    };
    let examples = load_primary(&args.data, num_labels)?;
    let texts: Vec<String> = examples.iter().map(|e| e.text.clone()).collect();
    let golds: Vec<LabelSet> = examples.iter().map(|e| e.labels.clone()).collect();
    let threshold = args.threshold.unwrap_or(ckpt.train_config.threshold);
    let mode = parse_mode(&args.mode)?;

    let report = eval::evaluate(
        &ckpt.params,
        &ckpt.encoder_config,
        &vocab,
        &texts,
        &golds,
        defs.as_ref(),
        &args.split,
        threshold,
        mode,
    )?;
    match args.format.as_str() {
        "json" => println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| CliError::data(e.to_string()))?
        ),
        "csv" => print!("{}", report.to_csv()),
        other => return Err(CliError::usage(format!("unknown format '{other}'"))),
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    check_threads(&args.common)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let vocab = Vocabulary::load(BufReader::new(fs::File::open(&args.vocab)?))?;
    let num_labels = ckpt.encoder_config.num_labels;
    let defs = match &args.definitions {
        Some(p) => Some(data::load_definitions(p)?),
        None => {
            let bundled = default_definitions();
            (bundled.num_labels() == num_labels).then_some(bundled)
        }
    };
    let texts = read_lines(&args.input)?;
    if texts.is_empty() {
        return Err(CliError::data("no input texts"));
    }
    let threshold = args.threshold.unwrap_or(ckpt.train_config.threshold);
    let probs = eval::predict_probs(
        &ckpt.params,
        &ckpt.encoder_config,
        &vocab,
        &texts,
        ckpt.train_config.batch_size,
    )?;
    for (text, row) in texts.iter().zip(&probs) {
        let set = eval::predict_label_set(row, threshold);
        let predictions: Vec<serde_json::Value> = set
            .iter()
            .map(|&l| {
                let name = defs
                    .as_ref()
                    .map(|d| d.name(l).to_string())
                    .unwrap_or_else(|| format!("label{l}"));
                serde_json::json!({ "label": name, "prob": row[l] })
            })
            .collect();
        println!(
            "{}",
            serde_json::json!({ "text": text, "predictions": predictions })
        );
    }
    Ok(())
}

fn cmd_transfer(args: TransferArgs) -> Result<(), CliError> {
    check_threads(&args.common)?;
    let file_cfg = load_file_config(args.common.config.as_deref())?;
    let paths = file_cfg.paths.unwrap_or_default();
    let transfer_sec = file_cfg.transfer.unwrap_or_default();
    let train_sec = file_cfg.train.unwrap_or_default();

    let target_path = required_path(args.target, paths.target, "target")?;
    let pairs = data::parse_target(BufReader::new(fs::File::open(&target_path)?))?;
    let dataset = TargetDataset::from_pairs(pairs)?;
    let vocab = Vocabulary::load(BufReader::new(fs::File::open(&args.vocab)?))?;

    let size_strings: Vec<String> = match (&args.sizes, &transfer_sec.sizes) {
        (Some(s), _) => s.split(',').map(|x| x.trim().to_string()).collect(),
        (None, Some(v)) => v.clone(),
        (None, None) => vec!["100".into(), "200".into(), "500".into()],
    };
    let mut sizes = Vec::new();
    for s in &size_strings {
        sizes.push(
            s.parse::<TrainSize>()
                .map_err(|e| CliError::usage(format!("invalid size '{s}': {e}")))?,
        );
    }
    let plan = TransferPlan {
        sizes,
        n_splits: args.splits.or(transfer_sec.splits).unwrap_or(10),
        seed: args.common.seed,
    };
    let defaults = TrainConfig::default();
    let train_config = TrainConfig {
        setup: Setup::ClassificationOnly,
        primary_prob: 1.0,
        epochs: args.epochs.or(train_sec.epochs).unwrap_or(defaults.epochs),
        batch_size: args.batch_size.or(train_sec.batch_size).unwrap_or(defaults.batch_size),
        learning_rate: args
            .learning_rate
            .or(train_sec.learning_rate)
            .unwrap_or(defaults.learning_rate),
        seed: args.common.seed,
        ..defaults
    };

    let ckpt: Option<Checkpoint> =
        args.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let mut initializers: Vec<Initializer<'_>> = Vec::new();
    if args.fresh || ckpt.is_none() {
        initializers.push(Initializer::Fresh {
            config: resolve_encoder(
                &args.encoder,
                file_cfg.encoder.as_ref(),
                vocab.len(),
                dataset.num_labels(),
            ),
        });
    }
    if let Some(c) = ckpt.as_ref() {
        initializers.push(Initializer::FromCheckpoint { name: "pretrained".into(), checkpoint: c });
    }

    let report = transfer::run_transfer_sweep(
        &args.name,
        &dataset,
        &plan,
        &train_config,
        &vocab,
        &initializers,
    )?;
    if let Some(csv_path) = &args.csv {
        fs::write(csv_path, report.to_csv())?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| CliError::data(e.to_string()))?
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    check_threads(&args.common)?;
    let entries = gradcheck::full_suite(args.common.seed)?;
    let max = entries.iter().map(|e| e.max_rel_error).fold(0.0f64, f64::max);
    let pass = max < args.tolerance;
    println!(
        "{}",
        serde_json::json!({
            "entries": entries,
            "max_rel_error": max,
            "tolerance": args.tolerance,
            "pass": pass,
        })
    );
    if !pass {
        return Err(CliError::numeric(format!(
            "gradient check failed: max relative error {max} >= {}",
            args.tolerance
        )));
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), CliError> {
    check_threads(&args.common)?;
    let file_cfg = load_file_config(args.common.config.as_deref())?;
    let paths = file_cfg.paths.unwrap_or_default();
    let defs_path = args.definitions.or(paths.definitions);
    let defs = load_definitions(defs_path.as_deref())?;
    let data_path = required_path(args.data, paths.train, "data")?;
    let examples = load_primary(&data_path, defs.num_labels())?;
    let stats = data::dataset_stats(&examples, defs.num_labels())?;
    let labelled: Vec<serde_json::Value> = stats
        .per_label_counts
        .iter()
        .enumerate()
        .map(|(l, &c)| serde_json::json!({ "label": defs.name(l), "count": c }))
        .collect();
    println!(
        "{}",
        serde_json::json!({
            "num_examples": stats.num_examples,
            "per_label_counts": labelled,
            "cardinality_histogram": stats.cardinality_histogram,
            "single_label_fraction": stats.single_label_fraction,
        })
    );
    Ok(())
}
