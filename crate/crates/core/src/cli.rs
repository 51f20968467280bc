//! The `hmlstm` command line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::baselines::LearnerKind;
use crate::checkpoint;
use crate::config::Config;
use crate::corpus::{gen_synthetic, load_dataset, save_tsv, split, Dataset, Format, SyntheticSpec, Taxonomy};
use crate::embedding::Embeddings;
use crate::error::{Error, Result};
use crate::eval::{write_csv, write_json, MetricsReport};
use crate::model::{check_gradients, ConsistencyMode, GradCheckSpec};
use crate::pipeline::{
    tokenize_dataset, train_embeddings, train_hmlstm, train_strategy, PathPrediction, StrategySettings,
    TrainedModel,
};
use crate::preprocess::{PreprocessOptions, StopwordList};
use crate::strategies::Strategy;

/// Environment variable naming the directory that relative input paths are
/// resolved against.
pub const DATA_DIR_ENV: &str = "HMLSTM_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "hmlstm", version, about = "Hierarchical text classification for Urdu news")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, tokenize and strip stopwords; writes a TSV whose text column holds the tokens.
    Preprocess(PreprocessArgs),
    /// Write a labelled synthetic corpus.
    GenSynthetic(GenSyntheticArgs),
    /// Shuffle a dataset and cut it into train and test files.
    Split(SplitArgs),
    /// Train CBOW word vectors.
    TrainEmbeddings(TrainEmbeddingsArgs),
    /// Train `hmlstm` or a `<strategy>:<learner>` model and write a checkpoint.
    Train(TrainArgs),
    /// Score one or more checkpoints on a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Label raw text with a checkpoint.
    Predict(PredictArgs),
    /// Check the LSTM model's gradients against finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Stopword list, one token per line. Defaults to the packaged Urdu list.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub no_stopwords: bool,
    /// tsv or jsonl; guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "3,3")]
    pub branching: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub docs_per_leaf: usize,
    #[arg(long, default_value_t = 20)]
    pub vocab_per_leaf: usize,
    #[arg(long, default_value_t = 10)]
    pub shared_vocab: usize,
    #[arg(long, default_value_t = 30)]
    pub doc_length: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct TrainEmbeddingsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// `.txt` or `.vec` writes the text format; anything else is binary.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `hmlstm`, or `<strategy>:<learner>` with strategy in flat, global,
    /// per-node, per-parent, per-level and learner in nb, logreg, svm, knn.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pretrained vectors; trained on `--data` with the `[cbow]` settings when omitted.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Per-epoch history CSV; defaults to `<output>.history.csv` for LSTM models.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the effective configuration and stop.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Row names for the CSV, one per checkpoint; defaults to the model kinds.
    #[arg(long = "name")]
    pub names: Vec<String>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Comparison table; printed to stdout when omitted.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Overrides the LSTM model's stored consistency mode.
    #[arg(long)]
    pub consistency: Option<ConsistencyMode>,
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub text: Option<String>,
    /// One document per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// JSON lines; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub consistency: Option<ConsistencyMode>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 3)]
    pub docs: usize,
    #[arg(long, default_value_t = 8)]
    pub tokens: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn resolve_input(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if path.is_relative() && !path.exists() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn read_data(path: &Path, format: Option<Format>, taxonomy: Option<&Taxonomy>) -> Result<Dataset> {
    let path = resolve_input(path);
    let format = format.unwrap_or_else(|| Format::from_path(&path));
    load_dataset(&path, format, taxonomy)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::from_file(&resolve_input(p))?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn flush(mut w: impl Write, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_kind(kind: &str) -> Result<Option<(Strategy, LearnerKind)>> {
    if kind == "hmlstm" {
        return Ok(None);
    }
    let (s, l) = kind.split_once(':').ok_or_else(|| {
        Error::InvalidArgument(format!("model kind must be `hmlstm` or `<strategy>:<learner>`, got {kind:?}"))
    })?;
    Ok(Some((s.parse()?, l.parse()?)))
}

fn cmd_preprocess(a: &PreprocessArgs, out: &mut dyn Write) -> Result<()> {
    let data = read_data(&a.input, a.format, None)?;
    let options = if a.no_stopwords {
        PreprocessOptions::without_stopwords()
    } else {
        PreprocessOptions {
            remove_stopwords: true,
            stopwords: match &a.stopwords {
                Some(p) => StopwordList::from_file(&resolve_input(p))?,
                None => StopwordList::default_urdu(),
            },
        }
    };
    let tokens = tokenize_dataset(&data, &options);
    let n_tokens: usize = tokens.iter().map(|t| t.len()).sum();
    let mut processed = data.clone();
    for (doc, t) in processed.documents.iter_mut().zip(&tokens) {
        doc.text = t.join();
    }
    save_tsv(&processed, &a.output)?;
    writeln!(out, "documents: {} tokens: {}", data.len(), n_tokens).ok();
    Ok(())
}

fn cmd_gen_synthetic(a: &GenSyntheticArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SyntheticSpec {
        branching: a.branching.clone(),
        docs_per_leaf: a.docs_per_leaf,
        vocab_per_leaf: a.vocab_per_leaf,
        shared_vocab: a.shared_vocab,
        doc_length: a.doc_length,
        noise_rate: a.noise,
    };
    let data = gen_synthetic(&spec, a.seed)?;
    save_tsv(&data, &a.output)?;
    writeln!(out, "documents: {} leaves: {}", data.len(), spec.n_leaves()).ok();
    Ok(())
}

fn cmd_split(a: &SplitArgs, out: &mut dyn Write) -> Result<()> {
    let data = read_data(&a.input, a.format, None)?;
    let (train, test) = split(&data, a.test_fraction, a.seed)?;
    save_tsv(&train, &a.train)?;
    save_tsv(&test, &a.test)?;
    writeln!(out, "train: {} test: {}", train.len(), test.len()).ok();
    Ok(())
}

fn cmd_train_embeddings(a: &TrainEmbeddingsArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let data = read_data(&a.input, a.format, None)?;
    let (emb, losses) = train_embeddings(&data, &cfg.preprocess_options()?, &cfg.cbow)?;
    emb.save(&a.output)?;
    writeln!(
        out,
        "vocabulary: {} dim: {} final loss: {:.4} fingerprint: {}",
        emb.vocab.len(),
        emb.dim(),
        losses.last().copied().unwrap_or(f64::NAN),
        emb.fingerprint()
    )
    .ok();
    Ok(())
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), a.seed)?;
    let kind = parse_kind(&a.kind)?;
    if a.dry_run {
        write!(out, "{}", cfg.to_toml()).ok();
        return Ok(());
    }
    let options = cfg.preprocess_options()?;
    let data = read_data(&a.data, a.format, None)?;
    let embeddings = match &a.embeddings {
        Some(p) => Embeddings::load(&resolve_input(p))?,
        None => train_embeddings(&data, &options, &cfg.cbow)?.0,
    };
    let embeddings = Arc::new(embeddings);

    let model = match kind {
        None => {
            cfg.hmlstm.embedding_dim = embeddings.dim();
            let (model, history) = train_hmlstm(&data, embeddings, &options, &cfg.hmlstm)?;
            let hist_path = a
                .history
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{}.history.csv", a.output.display())));
            let mut w = create(&hist_path)?;
            history.write_csv(&mut w)?;
            flush(w, &hist_path)?;
            if let Some(best) = history.epochs.get(history.best_epoch.wrapping_sub(1)) {
                writeln!(
                    out,
                    "epochs: {} best epoch: {} val loss: {:.4} val accuracy: {:.4}",
                    history.epochs.len(),
                    history.best_epoch,
                    best.val_loss,
                    best.val_accuracy
                )
                .ok();
            }
            TrainedModel::Hmlstm(model)
        }
        Some((strategy, learner)) => {
            let settings = StrategySettings {
                strategy,
                learner: cfg.learner_spec(learner),
                features: cfg.baseline.features,
                max_seq_len: cfg.baseline.max_seq_len,
                mask: cfg.baseline.mask,
            };
            TrainedModel::Strategy(train_strategy(&data, embeddings, &options, &settings)?)
        }
    };
    checkpoint::save(&a.output, &model, &options)?;
    writeln!(out, "wrote {} ({})", a.output.display(), model.kind_name()).ok();
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    if !a.names.is_empty() && a.names.len() != a.checkpoints.len() {
        return Err(Error::InvalidArgument(format!(
            "{} names given for {} checkpoints",
            a.names.len(),
            a.checkpoints.len()
        )));
    }
    let mut rows: Vec<(String, MetricsReport)> = Vec::new();
    for (i, path) in a.checkpoints.iter().enumerate() {
        let (model, options) = checkpoint::load(&resolve_input(path))?;
        let data = read_data(&a.data, a.format, Some(model.taxonomy()))?;
        let report = model.evaluate(&data, &options, a.consistency)?;
        let name = a.names.get(i).cloned().unwrap_or_else(|| model.kind_name());
        rows.push((name, report));
    }
    if let Some(p) = &a.json {
        let mut w = create(p)?;
        write_json(&rows, &mut w)?;
        flush(w, p)?;
    }
    match &a.csv {
        Some(p) => {
            let mut w = create(p)?;
            write_csv(&rows, &mut w)?;
            flush(w, p)?;
        }
        None => write_csv(&rows, &mut *out)?,
    }
    Ok(())
}

fn prediction_json(p: &PathPrediction) -> serde_json::Value {
    let levels: Vec<serde_json::Value> = p
        .levels
        .iter()
        .map(|lvl| {
            serde_json::Value::Object(
                lvl.iter()
                    .map(|(l, v)| (l.clone(), serde_json::json!(v)))
                    .collect(),
            )
        })
        .collect();
    serde_json::json!({
        "labels": p.labels,
        "levels": levels,
        "consistent": p.consistent,
    })
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let (model, options) = checkpoint::load(&resolve_input(&a.checkpoint))?;
    let texts: Vec<String> = match (&a.text, &a.input) {
        (Some(t), _) => vec![t.clone()],
        (None, Some(p)) => {
            let p = resolve_input(p);
            let f = File::open(&p).map_err(|e| Error::io(&p, e))?;
            BufReader::new(f)
                .lines()
                .collect::<std::io::Result<_>>()
                .map_err(|e| Error::io(&p, e))?
        }
        (None, None) => return Err(Error::InvalidArgument("give --text or --input".into())),
    };
    let mut lines = Vec::with_capacity(texts.len());
    for t in &texts {
        let p = model.predict_text(t, &options, a.consistency)?;
        lines.push(serde_json::to_string(&prediction_json(&p))?);
    }
    match &a.output {
        Some(path) => {
            let mut w = create(path)?;
            for l in &lines {
                writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
            }
            flush(w, path)?;
        }
        None => {
            for l in &lines {
                writeln!(out, "{l}").ok();
            }
        }
    }
    Ok(())
}

fn cmd_grad_check(a: &GradCheckArgs, out: &mut dyn Write) -> Result<()> {
    let report = check_gradients(&GradCheckSpec {
        docs: a.docs,
        tokens: a.tokens,
        hidden: a.hidden,
        embedding_dim: a.dim,
        eps: a.eps,
        seed: a.seed,
        ..GradCheckSpec::default()
    })?;
    writeln!(
        out,
        "parameters: {} max relative error: {:e} max absolute error: {:e}",
        report.checked, report.max_rel_error, report.max_abs_error
    )
    .ok();
    if report.max_rel_error < a.tolerance {
        Ok(())
    } else {
        Err(Error::GradCheck {
            max_rel_error: report.max_rel_error,
            tolerance: a.tolerance,
        })
    }
}

/// Runs one command, writing its normal output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a, out),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a, out),
        Command::Split(a) => cmd_split(a, out),
        Command::TrainEmbeddings(a) => cmd_train_embeddings(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::GradCheck(a) => cmd_grad_check(a, out),
    }
}

/// One line: `error[<class>]: <message>`.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error[{}]: {msg}", e.class())
}
