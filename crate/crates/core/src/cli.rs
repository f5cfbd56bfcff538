//! Command-line front end. [`run`] parses arguments, dispatches and maps
//! errors to exit codes: 0 success, 1 usage or configuration, 2 data,
//! 3 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{parse_models, RunConfig};
use crate::corpus::{
    encode, load_examples, load_posts, load_pretrained_embeddings, save_examples, tokenize, write_posts,
    EmbeddingTable, LabeledExample, Vocabulary,
};
use crate::diffcore::RngStream;
use crate::error::{Error, Result};
use crate::mcd::PredictiveDistribution;
use crate::model::{Model, ModelKind};
use crate::synthetic::{imbalanced_corpus, separable_corpus};
use crate::train_eval::{
    evaluate, load_checkpoint, run_experiment, save_checkpoint, train, ExperimentData, ExperimentSummary,
    MetricsReport, Protocol,
};
use crate::verify::{run_suite, SuiteSize};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const EXAMPLES_FILE: &str = "examples.tsv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRACE_FILE: &str = "trace.json";

const EMBED_STREAM: u64 = 0xE3BD;

#[derive(Debug, Parser)]
#[command(
    name = "urgency",
    version,
    about = "Urgent forum-post classifiers with uncertainty estimates"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Binarize, tokenize and encode a post file; write vocabulary, examples and a summary.
    Prepare(PrepareArgs),
    /// Train one model kind on prepared examples.
    Train(TrainArgs),
    /// Print test-set metrics of a checkpoint as JSON.
    Evaluate(EvaluateArgs),
    /// Run the 80/20 or 40/60 protocol over several runs.
    Experiment(ExperimentArgs),
    /// Predict urgency for new posts (JSON lines).
    Predict(PredictArgs),
    /// Finite-difference check of every operation and end-to-end loss.
    Gradcheck(GradcheckArgs),
    /// Write a generated post file.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Pretrained vectors; only used to report vocabulary coverage.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory written by `prepare`.
    #[arg(long)]
    pub prepared: Option<PathBuf>,
    /// Train on this examples file instead of the prepared one.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Encoded examples file (as written by `prepare`).
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Comma-separated model kinds, e.g. `base,mcd,vi`.
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub prepared: Option<PathBuf>,
    /// Raw post file, prepared in memory when no prepared directory is given.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Post text; may be repeated.
    #[arg(long)]
    pub text: Vec<String>,
    /// File with one post per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Include every sample's logits.
    #[arg(long)]
    pub per_sample: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "small")]
    pub size: String,
    /// Add a check with a deliberately wrong derivative.
    #[arg(long)]
    pub negative_control: bool,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    Separable,
    Imbalanced,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "imbalanced")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.19)]
    pub positive_fraction: f64,
    /// Longest generated post, in words.
    #[arg(long, default_value_t = 16)]
    pub max_words: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Stable per-prediction output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub text: String,
    pub predicted_label: u8,
    pub mean_probs: [f64; 2],
    pub entropy: f64,
    pub model_kind: ModelKind,
    pub num_samples: usize,
    pub per_sample_logits: Option<Vec<[f64; 2]>>,
}

impl PredictionRecord {
    pub fn new(text: &str, kind: ModelKind, d: PredictiveDistribution, per_sample: bool) -> Self {
        PredictionRecord {
            text: text.to_string(),
            predicted_label: d.predicted_label,
            mean_probs: d.mean_probs,
            entropy: d.entropy,
            model_kind: kind,
            num_samples: d.num_samples(),
            per_sample_logits: per_sample.then_some(d.per_sample_logits),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassCounts {
    pub non_urgent: usize,
    pub urgent: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareSummary {
    pub n_posts: usize,
    pub class_counts: ClassCounts,
    pub skipped: Vec<SkippedRow>,
    pub vocab_size: usize,
    pub min_freq: usize,
    pub max_len: usize,
    pub truncated: usize,
    pub mean_length: f64,
    pub embedding_coverage: Option<f64>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn required(value: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Error::Usage(format!("missing {what} (flag or config key)")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn class_counts(examples: &[LabeledExample]) -> ClassCounts {
    let urgent = examples.iter().filter(|e| e.label == 1).count();
    ClassCounts {
        non_urgent: examples.len() - urgent,
        urgent,
    }
}

/// Reads, binarizes, tokenizes and encodes a post file.
pub fn prepare_posts(
    path: &Path,
    min_freq: usize,
    max_len: usize,
) -> Result<(Vocabulary, Vec<LabeledExample>, PrepareSummary)> {
    let loaded = load_posts(path)?;
    for (line, reason) in &loaded.skipped {
        log::warn!("{}:{line}: skipped ({reason})", path.display());
    }
    if loaded.posts.is_empty() {
        return Err(Error::Data(format!("{}: no valid posts", path.display())));
    }
    let tokens: Vec<Vec<String>> = loaded.posts.iter().map(|p| tokenize(&p.text)).collect();
    let vocab = Vocabulary::build(&tokens, min_freq)?;
    let mut examples = Vec::with_capacity(tokens.len());
    let mut truncated = 0;
    for (post, toks) in loaded.posts.iter().zip(&tokens) {
        let (token_ids, true_length) = encode(toks, &vocab, max_len)?;
        if true_length == 0 {
            return Err(Error::Data(format!("post {:?} has no tokens", post.text)));
        }
        truncated += usize::from(toks.len() > max_len);
        examples.push(LabeledExample {
            token_ids,
            true_length,
            label: post.label()?,
        });
    }
    let summary = PrepareSummary {
        n_posts: examples.len(),
        class_counts: class_counts(&examples),
        skipped: loaded
            .skipped
            .iter()
            .map(|(line, reason)| SkippedRow {
                line: *line,
                reason: reason.clone(),
            })
            .collect(),
        vocab_size: vocab.len(),
        min_freq,
        max_len,
        truncated,
        mean_length: examples.iter().map(|e| e.true_length as f64).sum::<f64>() / examples.len() as f64,
        embedding_coverage: None,
    };
    Ok((vocab, examples, summary))
}

fn load_prepared(dir: &Path) -> Result<(Vocabulary, Vec<LabeledExample>)> {
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let examples = load_examples(&dir.join(EXAMPLES_FILE))?;
    check_ids(&examples, vocab.len())?;
    Ok((vocab, examples))
}

fn check_ids(examples: &[LabeledExample], vocab_size: usize) -> Result<()> {
    if let Some((i, id)) = examples
        .iter()
        .enumerate()
        .find_map(|(i, e)| e.tokens().iter().find(|&&t| t >= vocab_size).map(|&t| (i, t)))
    {
        return Err(Error::Data(format!(
            "example {} uses token id {id}, but the vocabulary has {vocab_size} entries",
            i + 1
        )));
    }
    Ok(())
}

fn load_embeddings(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Option<EmbeddingTable>> {
    let Some(path) = &cfg.embeddings else { return Ok(None) };
    let mut rng = RngStream::new(cfg.train.seed, EMBED_STREAM);
    let table = load_pretrained_embeddings(path, vocab, cfg.hp.embed_dim, &mut rng)?;
    log::info!(
        "pretrained embeddings cover {:.1}% of the vocabulary",
        100.0 * table.coverage
    );
    Ok(Some(table))
}

fn cmd_prepare(a: PrepareArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(v) = a.min_freq {
        cfg.min_freq = v;
    }
    if let Some(v) = a.max_len {
        cfg.hp.max_len = v;
    }
    cfg.data = a.data.or(cfg.data);
    cfg.out = a.out.or(cfg.out);
    cfg.embeddings = a.embeddings.or(cfg.embeddings);
    cfg.validate()?;
    let data = required(cfg.data.clone(), "--data")?;
    let dir = required(cfg.out.clone(), "--out")?;
    let (vocab, examples, mut summary) = prepare_posts(&data, cfg.min_freq, cfg.hp.max_len)?;
    if let Some(table) = load_embeddings(&cfg, &vocab)? {
        summary.embedding_coverage = Some(table.coverage);
    }
    create_dir(&dir)?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    save_examples(&dir.join(EXAMPLES_FILE), &examples)?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    cfg.write_effective(&dir)?;
    print_json(out, &summary)
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(m) = &a.model {
        cfg.model = m.parse()?;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.prepared = a.prepared.or(cfg.prepared);
    cfg.out = a.out.or(cfg.out);
    cfg.validate()?;
    let dir = required(cfg.prepared.clone(), "--prepared")?;
    let out_dir = required(cfg.out.clone(), "--out")?;
    let (vocab, mut examples) = load_prepared(&dir)?;
    if let Some(path) = &a.train {
        examples = load_examples(path)?;
        check_ids(&examples, vocab.len())?;
    }
    let embeddings = load_embeddings(&cfg, &vocab)?;
    let mut model = Model::new(cfg.spec(), vocab.len(), embeddings.as_ref(), cfg.train.seed)?;
    let trace = train(&mut model, &examples, &cfg.train)?;
    create_dir(&out_dir)?;
    save_checkpoint(&model, &out_dir.join(CHECKPOINT_FILE))?;
    write_json(&out_dir.join(TRACE_FILE), &trace)?;
    cfg.write_effective(&out_dir)?;
    print_json(out, &trace)
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let examples = load_examples(&a.test)?;
    check_ids(&examples, model.vocab_size())
        .map_err(|e| Error::Data(format!("checkpoint and test data disagree: {e}")))?;
    let report: MetricsReport = evaluate(&model, &examples, RngStream::new(a.seed, 0))?;
    print_json(out, &report)
}

fn experiment_data(cfg: &RunConfig) -> Result<ExperimentData> {
    let (vocab, examples) = if let Some(dir) = &cfg.prepared {
        load_prepared(dir)?
    } else if let Some(path) = &cfg.data {
        let (v, e, _) = prepare_posts(path, cfg.min_freq, cfg.hp.max_len)?;
        (v, e)
    } else {
        return Err(Error::Usage("experiment needs --prepared or --data".into()));
    };
    let embeddings = load_embeddings(cfg, &vocab)?;
    Ok(ExperimentData {
        vocab_size: vocab.len(),
        examples,
        embeddings,
    })
}

fn print_table(summary: &ExperimentSummary) {
    let best = summary.protocol == Protocol::Split80_20;
    eprintln!(
        "protocol {} ({} runs), {}",
        summary.protocol,
        summary.runs,
        if best {
            "best run by accuracy"
        } else {
            "mean ± variance"
        }
    );
    eprintln!(
        "{:<5} {:>16} {:>16} {:>16} {:>16} {:>16}",
        "model", "accuracy", "entropy", "urgent P", "urgent R", "urgent F1"
    );
    for m in &summary.models {
        let cells: Vec<String> = if best {
            let b = &m.best;
            [
                b.accuracy,
                b.mean_entropy,
                b.urgent.precision,
                b.urgent.recall,
                b.urgent.f1,
            ]
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect()
        } else {
            [
                m.accuracy,
                m.mean_entropy,
                m.urgent_precision,
                m.urgent_recall,
                m.urgent_f1,
            ]
            .iter()
            .map(|s| format!("{:.4}±{:.5}", s.mean, s.variance))
            .collect()
        };
        eprintln!(
            "{:<5} {:>16} {:>16} {:>16} {:>16} {:>16}",
            m.model_kind, cells[0], cells[1], cells[2], cells[3], cells[4]
        );
    }
}

fn cmd_experiment(a: ExperimentArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(p) = &a.protocol {
        cfg.protocol = p.parse()?;
    }
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if let Some(m) = &a.models {
        cfg.models = parse_models(m)?;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.prepared = a.prepared.or(cfg.prepared);
    cfg.data = a.data.or(cfg.data);
    cfg.out = a.out.or(cfg.out);
    cfg.validate()?;
    let data = experiment_data(&cfg)?;
    let summary = run_experiment(&data, &cfg.experiment())?;
    if let Some(dir) = &cfg.out {
        create_dir(dir)?;
        for run in &summary.per_run {
            let run_dir = dir.join(format!("run_{:02}", run.run));
            create_dir(&run_dir)?;
            write_json(&run_dir.join("run.json"), run)?;
        }
        write_json(&dir.join(SUMMARY_FILE), &summary)?;
        cfg.write_effective(dir)?;
    }
    print_table(&summary);
    print_json(out, &summary)
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    if vocab.len() != model.vocab_size() {
        return Err(Error::Data(format!(
            "vocabulary has {} entries, checkpoint expects {}",
            vocab.len(),
            model.vocab_size()
        )));
    }
    let mut texts = a.text.clone();
    if let Some(path) = &a.input {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        texts.extend(content.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
    }
    if texts.is_empty() {
        return Err(Error::Usage("nothing to predict: give --text or --input".into()));
    }
    let root = RngStream::new(a.seed, 0);
    for (i, text) in texts.iter().enumerate() {
        let (ids, len) = encode(&tokenize(text), &vocab, model.spec.hp.max_len)?;
        let d = model.predict(&ids[..len], &root.derive(i as u64))?;
        let record = PredictionRecord::new(text, model.kind(), d, a.per_sample);
        writeln!(out, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let size: SuiteSize = a.size.parse()?;
    let report = run_suite(size, a.negative_control)?;
    if a.json {
        print_json(out, &report)?;
    } else {
        write!(out, "{}", report.table()).map_err(|e| Error::io("<stdout>", e))?;
    }
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failed().map(|c| c.name.as_str()).collect();
        Err(Error::GradientMismatch(names.join(", ")))
    }
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let corpus = match a.kind {
        SynthKind::Separable => separable_corpus(a.n, a.max_words, a.seed),
        SynthKind::Imbalanced => {
            if !(0.0..=1.0).contains(&a.positive_fraction) {
                return Err(Error::Usage(format!(
                    "positive fraction {} outside [0, 1]",
                    a.positive_fraction
                )));
            }
            imbalanced_corpus(a.n, a.positive_fraction, a.max_words, a.seed)
        }
    };
    write_posts(&a.out, &corpus.posts)?;
    print_json(out, &class_counts(&corpus.examples))
}

pub fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Prepare(a) => cmd_prepare(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Experiment(a) => cmd_experiment(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match dispatch(cli.command, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
