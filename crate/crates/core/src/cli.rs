//! The `tommer` command line.
//!
//! Every subcommand accepts `--config FILE`, a `key = value` file whose
//! entries are applied as if given as `--key value` before the real flags, so
//! flags given on the command line win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde_json::json;

use crate::decoding::{decode, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::evaluation::{dice_matrix, match_prf, AggregateMode, EvalReport, SpanSets};
use crate::judge::{
    judge_items, judge_spans, sample_spans, summarize, write_audit, ContextWindow, HttpChat,
    JudgeConfig, DEFAULT_CONTEXT_RADIUS, DEFAULT_SAMPLE_K,
};
use crate::nerhead::{
    ner_f1, predict_types, train_ner_head, MentionSource, NerHeadParams, NerTrainConfig,
    DEFAULT_HIDDEN,
};
use crate::probe::{DirRepSource, ProbeKind, ProbeModel, RepSource, Reps};
use crate::repio::{
    load_checkpoint, read_dataset, read_predictions, read_typed_dataset, save_checkpoint,
    write_dataset, write_predictions, write_typed_predictions, DecodeMode, PredictionRecord,
    TypedPredictionRecord,
};
use crate::spanspace::DEFAULT_WINDOW;
use crate::training::{distill_augment, distill_train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "tommer", version, about = "Mention-span detection probes")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Print errors as JSON on stderr.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a probe (with optional self-distillation phases).
    Train(TrainArgs),
    /// Score and decode spans with a trained probe.
    Infer(InferArgs),
    /// Precision, recall and F1 against gold mentions.
    Eval(EvalArgs),
    /// Pairwise Dice agreement between prediction files.
    Dice(DiceArgs),
    /// Add a teacher's confident spans to a dataset's mentions.
    Distill(DistillArgs),
    /// Estimate precision with an LLM judge.
    Judge(JudgeArgs),
    /// Train a span-typing head.
    NerTrain(NerTrainArgs),
    /// Type predicted spans and score them against typed gold.
    NerEval(NerEvalArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub reps_dir: PathBuf,
    #[arg(long, default_value = "tom")]
    pub variant: ProbeKind,
    #[arg(long, default_value_t = 64)]
    pub rank: usize,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 2.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.02)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub val_threshold: f64,
    #[arg(long)]
    pub val_interval: Option<usize>,
    #[arg(long, default_value_t = 5000)]
    pub patience: usize,
    #[arg(long, default_value_t = 1)]
    pub distill_phases: usize,
    #[arg(long, default_value_t = 0.90)]
    pub teacher_threshold: f64,
    /// Continue each distillation phase from the teacher's weights.
    #[arg(long)]
    pub keep_student: bool,
    #[arg(long, default_value = "")]
    pub backbone: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step JSONL log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Final metrics JSON; defaults to `<out>.metrics.json`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory holding representation files; defaults to the dataset's directory.
    #[arg(long)]
    pub reps_dir: Option<PathBuf>,
    #[arg(long, default_value = "threshold")]
    pub mode: DecodeMode,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction files, paired by position with `--gold`.
    #[arg(long, num_args = 1.., required = true)]
    pub preds: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub gold: Vec<PathBuf>,
    /// Benchmark names; default to the gold file stems.
    #[arg(long, num_args = 1..)]
    pub names: Vec<String>,
    #[arg(long, default_value = "aggregated")]
    pub mode: AggregateMode,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiceArgs {
    #[arg(long, num_args = 2.., required = true)]
    pub preds: Vec<PathBuf>,
    /// Run labels; default to the file stems.
    #[arg(long, num_args = 1..)]
    pub labels: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub reps_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.90)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    #[arg(long)]
    pub preds: PathBuf,
    /// Dataset with token texts for the predicted sequences.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "https://api.openai.com/v1")]
    pub base_url: String,
    #[arg(long, default_value = "gpt-4.1-mini")]
    pub model: String,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_K)]
    pub sample_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_CONTEXT_RADIUS)]
    pub context_radius: usize,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
    #[arg(long, default_value_t = 3)]
    pub max_attempts: usize,
    #[arg(long, default_value_t = 500)]
    pub backoff_ms: u64,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    /// Audit JSONL with one record per judged span.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NerTrainArgs {
    /// Typed dataset (`[s, e, "TYPE"]` mentions).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Representations of the embedding layer.
    #[arg(long)]
    pub reps_dir: PathBuf,
    #[arg(long, default_value = "predictions")]
    pub mention_source: MentionSource,
    /// Detector predictions, required for `--mention-source predictions`.
    #[arg(long)]
    pub preds: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 2.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub embed_layer: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NerEvalArgs {
    #[arg(long)]
    pub head: PathBuf,
    /// Typed gold dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub reps_dir: PathBuf,
    /// Spans to type; the gold spans are typed when omitted.
    #[arg(long)]
    pub preds: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

const SUBCOMMANDS: [&str; 8] = [
    "train",
    "infer",
    "eval",
    "dice",
    "distill",
    "judge",
    "ner-train",
    "ner-eval",
];

/// Parses a `key = value` overlay into flags. `true` becomes a bare flag,
/// `false` is dropped.
pub fn config_overlay(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::MalformedRecord {
            line: i + 1,
            message: format!("expected key = value, got {raw:?}"),
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => {
                out.push(format!("--{key}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

/// Removes `--config FILE` and splices its overlay in right after the
/// subcommand name.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(
                it.next()
                    .ok_or_else(|| Error::Config("--config needs a path".into()))?,
            );
        } else if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            config = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let path = PathBuf::from(path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let overlay = config_overlay(&text)?;
    let at = rest
        .iter()
        .position(|a| a.to_str().is_some_and(|s| SUBCOMMANDS.contains(&s)))
        .map_or(rest.len(), |i| i + 1);
    rest.splice(at..at, overlay);
    Ok(rest)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn reps_source(dir: Option<&PathBuf>, dataset: &Path) -> DirRepSource {
    match dir {
        Some(d) => DirRepSource::new(d),
        None => DirRepSource::new(dataset.parent().unwrap_or(Path::new("."))),
    }
}

fn pred_sets(records: &[PredictionRecord]) -> SpanSets {
    records
        .iter()
        .map(|r| (r.seq_id.clone(), r.span_set()))
        .collect()
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let dataset = read_dataset(&a.dataset)?;
    let source = DirRepSource::new(&a.reps_dir);
    let config = TrainConfig {
        kind: a.variant,
        epochs: a.epochs,
        batch_size: a.batch,
        window: a.window,
        rank: a.rank,
        lr: a.lr,
        grad_clip: a.clip,
        weight_decay: a.weight_decay,
        seed: a.seed,
        val_fraction: a.val_fraction,
        val_threshold: a.val_threshold,
        val_interval: a.val_interval,
        patience: a.patience,
        distill_phases: a.distill_phases,
        teacher_threshold: a.teacher_threshold,
        reset_student: !a.keep_student,
        layer: a.layer,
        backbone: a.backbone.clone(),
    };
    let outcome = distill_train(&dataset, &source, &config)?;
    save_checkpoint(&outcome.model.to_checkpoint()?, &a.out)?;

    let mut log = String::new();
    for (phase, l) in outcome.logs.iter().enumerate() {
        for s in &l.steps {
            let line = json!({
                "phase": phase,
                "step": s.step,
                "epoch": s.epoch,
                "loss": s.loss,
                "alpha": s.alpha,
                "pos": s.pos,
                "neg": s.neg,
                "lr": s.lr,
                "grad_norm": s.grad_norm,
            });
            log.push_str(&line.to_string());
            log.push('\n');
        }
    }
    write_file(
        &a.log
            .clone()
            .unwrap_or_else(|| with_suffix(&a.out, ".log.jsonl")),
        &log,
    )?;
    let phases: Vec<_> = outcome
        .logs
        .iter()
        .map(|l| {
            json!({
                "steps": l.steps.len(),
                "best_step": l.best_step,
                "best_f1": l.best_f1,
                "dropped_gold": l.dropped_gold,
                "validations": l.validations,
                "final_loss": l.steps.last().map(|s| s.loss),
            })
        })
        .collect();
    let metrics = json!({
        "num_params": outcome.model.params.num_params(),
        "phases": phases,
        "augmentation": outcome.augment_reports,
        "config": config,
    });
    write_json(
        &a.metrics
            .clone()
            .unwrap_or_else(|| with_suffix(&a.out, ".metrics.json")),
        &metrics,
    )?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    if !(a.tau > 0.0 && a.tau < 1.0) {
        return Err(Error::Config(format!(
            "tau must lie in (0, 1), got {}",
            a.tau
        )));
    }
    let model = ProbeModel::from_checkpoint(&load_checkpoint(&a.ckpt)?)?;
    let dataset = read_dataset(&a.dataset)?;
    let source = reps_source(a.reps_dir.as_ref(), &a.dataset);
    let records: Vec<PredictionRecord> = dataset
        .par_iter()
        .map(|seq| {
            let inputs = source.load(seq, model.kind())?;
            let probs = model.score(&inputs)?;
            Ok(PredictionRecord {
                seq_id: seq.seq_id.clone(),
                spans: decode(&probs, a.tau, a.mode),
                mode: a.mode,
            })
        })
        .collect::<Result<_>>()?;
    write_predictions(&records, &a.out)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if a.preds.len() != a.gold.len() {
        return Err(Error::Config(format!(
            "{} prediction files for {} gold files",
            a.preds.len(),
            a.gold.len()
        )));
    }
    if !a.names.is_empty() && a.names.len() != a.gold.len() {
        return Err(Error::Config("--names must match --gold in length".into()));
    }
    let mut benchmarks = BTreeMap::new();
    for (i, (p, g)) in a.preds.iter().zip(&a.gold).enumerate() {
        let pred = pred_sets(&read_predictions(p)?);
        let gold: SpanSets = read_dataset(g)?
            .into_iter()
            .map(|s| (s.seq_id, s.mentions))
            .collect();
        let name = a.names.get(i).cloned().unwrap_or_else(|| stem(g));
        benchmarks.insert(name, match_prf(&pred, &gold)?);
    }
    let report = EvalReport::new(benchmarks, a.mode)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.report {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_dice(a: &DiceArgs) -> Result<()> {
    if !a.labels.is_empty() && a.labels.len() != a.preds.len() {
        return Err(Error::Config(
            "--labels must match --preds in length".into(),
        ));
    }
    let runs = a
        .preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let label = a.labels.get(i).cloned().unwrap_or_else(|| stem(p));
            Ok((label, pred_sets(&read_predictions(p)?)))
        })
        .collect::<Result<Vec<_>>>()?;
    write_file(&a.out, &dice_matrix(&runs)?.to_csv())
}

fn cmd_distill(a: &DistillArgs) -> Result<()> {
    let teacher = ProbeModel::from_checkpoint(&load_checkpoint(&a.ckpt)?)?;
    let dataset = read_dataset(&a.dataset)?;
    let source = reps_source(a.reps_dir.as_ref(), &a.dataset);
    let (augmented, report) = distill_augment(&dataset, &source, &teacher, a.threshold)?;
    info!(
        "added {} spans to {} sequences",
        report.added, report.sequences_touched
    );
    write_dataset(&augmented, &a.out)?;
    match &a.report {
        Some(path) => write_json(path, &report),
        None => Ok(()),
    }
}

fn cmd_judge(a: &JudgeArgs) -> Result<()> {
    let preds = read_predictions(&a.preds)?;
    let dataset = read_dataset(&a.dataset)?;
    let items = judge_items(&preds, &dataset, ContextWindow::symmetric(a.context_radius))?;
    let items = sample_spans(&items, a.sample_k, a.seed);
    let config = JudgeConfig {
        base_url: a.base_url.clone(),
        model: a.model.clone(),
        api_key: std::env::var(&a.api_key_env).ok(),
        concurrency: a.concurrency,
        max_attempts: a.max_attempts,
        backoff: Duration::from_millis(a.backoff_ms),
        timeout: Duration::from_secs(a.timeout_secs),
    };
    if config.api_key.is_none() {
        log::warn!(
            "{} is not set; sending requests without a key",
            a.api_key_env
        );
    }
    let records = judge_spans(&items, &HttpChat::new(&config), &config);
    write_audit(&records, &a.out)?;
    let report = summarize(&records);
    info!(
        "judged {}: {} yes, {} no, {} unparsed, {} failed",
        report.total, report.accepted, report.rejected, report.unparsed, report.failed
    );
    match &a.report {
        Some(path) => write_json(path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn cmd_ner_train(a: &NerTrainArgs) -> Result<()> {
    let dataset = read_typed_dataset(&a.dataset)?;
    let source = DirRepSource::new(&a.reps_dir);
    let predicted = a
        .preds
        .as_ref()
        .map(|p| read_predictions(p).map(|r| pred_sets(&r)))
        .transpose()?;
    let config = NerTrainConfig {
        hidden: a.hidden,
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        weight_decay: a.weight_decay,
        grad_clip: a.clip,
        seed: a.seed,
        mention_source: a.mention_source,
        embed_layer: a.embed_layer,
    };
    let head = train_ner_head(&dataset, &source, predicted.as_ref(), &config)?;
    save_checkpoint(&head.to_checkpoint(a.embed_layer)?, &a.out)
}

fn cmd_ner_eval(a: &NerEvalArgs) -> Result<()> {
    let head = NerHeadParams::from_checkpoint(&load_checkpoint(&a.head)?)?;
    let gold = read_typed_dataset(&a.dataset)?;
    let source = DirRepSource::new(&a.reps_dir);
    let predicted = a
        .preds
        .as_ref()
        .map(|p| read_predictions(p).map(|r| pred_sets(&r)))
        .transpose()?;
    let typed: Vec<TypedPredictionRecord> = gold
        .par_iter()
        .map(|seq| {
            let spans = match &predicted {
                Some(p) => p.get(&seq.seq_id).cloned().unwrap_or_default(),
                None => seq.mentions.keys().copied().collect(),
            };
            let reps = Reps::from_tensor(&source.load(&seq.untyped(), ProbeKind::Tom)?.reps)?;
            let typed = predict_types(&reps, &spans, &head)?;
            Ok(TypedPredictionRecord {
                seq_id: seq.seq_id.clone(),
                spans: typed
                    .into_iter()
                    .map(|(s, t)| (s.start, s.end, t))
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    if let Some(out) = &a.out {
        write_typed_predictions(&typed, out)?;
    }
    let prf = ner_f1(&typed, &gold)?;
    let text = serde_json::to_string_pretty(&prf)? + "\n";
    match &a.report {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Dice(a) => cmd_dice(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Judge(a) => cmd_judge(a),
        Command::NerTrain(a) => cmd_ner_train(a),
        Command::NerEval(a) => cmd_ner_eval(a),
    }
}

fn report_error(err: &Error, as_json: bool) -> i32 {
    let code = if err.is_input_error() { 2 } else { 1 };
    let mut stderr = std::io::stderr().lock();
    if as_json {
        let body =
            json!({"error": {"kind": err.kind(), "message": err.to_string(), "exit_code": code}});
        let _ = writeln!(stderr, "{body}");
    } else {
        let _ = writeln!(stderr, "error: {err}");
    }
    code
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let as_json = args.iter().any(|a| a == "--json");
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => return report_error(&e, as_json),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => report_error(&e, cli.json),
    }
}
