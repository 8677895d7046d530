//! The `ddx` command suite: generate data, train, evaluate, sweep thresholds,
//! explain a prediction and serve the HTTP API.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ddx_core::eval::{evaluate_ddx, evaluate_pathology, threshold_sweep, write_sweep_csv, Averaging};
use ddx_core::explain::{export_explanation, trace_attention};
use ddx_core::model::{LoraConfig, ModelConfig, ModelState, BOS_ID};
use ddx_core::records::{
    class_counts, generate_dataset, load_dataset, save_dataset, serialize_answers, serialize_record, tokenize,
    PathologyCatalog, PatientRecord, Vocabulary,
};
use ddx_core::train::{
    encode_records, load_checkpoint, save_checkpoint, save_history_csv, train_with, Checkpoint, Task, TrainConfig,
    TrainError,
};
use ddx_server::{validate_and_normalize, ServerConfig, Submission, DEFAULT_PORT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("training diverged: non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::NonFinite { .. } => 3,
            CliError::Mismatch(_) => 4,
            CliError::Failed(_) => 1,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "ddx", version, about = "Train, evaluate and serve a LoRA-adapted differential-diagnosis model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic patient dataset as JSON lines.
    GenData(GenDataArgs),
    /// Train adapters and one head, writing a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Score a ddx checkpoint at several thresholds and write CSV.
    Sweep(SweepArgs),
    /// Export attention maps and token saliency for one input.
    Explain(ExplainArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
}

fn parse_threshold(s: &str) -> Result<f32, String> {
    let t: f32 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(format!("{t} is outside [0, 1]"))
    }
}

/// Comma-separated thresholds in descending order.
#[derive(Clone, Debug)]
pub struct Thresholds(pub Vec<f32>);

fn parse_thresholds(s: &str) -> Result<Thresholds, String> {
    let ts = s.split(',').map(|t| parse_threshold(t.trim())).collect::<Result<Vec<_>, _>>()?;
    if !ts.windows(2).all(|w| w[0] >= w[1]) {
        return Err("thresholds must be listed in descending order".into());
    }
    Ok(Thresholds(ts))
}

fn parse_dropout(s: &str) -> Result<f32, String> {
    let p: f32 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 1)"))
    }
}

fn parse_positive(s: &str) -> Result<f32, String> {
    let v: f32 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

#[derive(Debug, Args)]
pub struct CatalogArg {
    /// Pathology catalog JSON; defaults to the built-in one.
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
}

impl CatalogArg {
    fn load(&self) -> Result<PathologyCatalog, CliError> {
        match &self.catalog {
            Some(p) => PathologyCatalog::load(p).map_err(|e| io_err(p, e)),
            None => Ok(PathologyCatalog::builtin()),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5000, value_parser = clap::value_parser!(u64).range(1..))]
    pub patients: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub catalog: CatalogArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `pathology` or `ddx`.
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to 1 for pathology and 2 for ddx.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub lora_rank: u64,
    #[arg(long, default_value_t = 16.0, value_parser = parse_positive)]
    pub lora_alpha: f32,
    #[arg(long, default_value_t = 0.1, value_parser = parse_dropout)]
    pub lora_dropout: f32,
    #[arg(long, default_value_t = 1e-3, value_parser = parse_positive)]
    pub learning_rate: f32,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f32,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-step losses as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub catalog: CatalogArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Expected checkpoint task; a different one is an artifact mismatch.
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long, default_value_t = 0.5, value_parser = parse_threshold)]
    pub threshold: f32,
    #[arg(long, default_value = "macro")]
    pub averaging: Averaging,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub catalog: CatalogArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated, descending.
    #[arg(long, default_value = "0.5,0.35,0", value_parser = parse_thresholds)]
    pub thresholds: Thresholds,
    #[arg(long, default_value = "micro")]
    pub averaging: Averaging,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub catalog: CatalogArg,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A questionnaire submission, a dataset record, or `{"text": ...}`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub catalog: CatalogArg,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "DDX_PORT", default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, env = "DDX_PATHOLOGY_CKPT")]
    pub pathology_ckpt: Option<PathBuf>,
    #[arg(long, env = "DDX_DDX_CKPT")]
    pub ddx_ckpt: Option<PathBuf>,
    #[arg(long, env = "DDX_THRESHOLD", value_parser = parse_threshold)]
    pub threshold: Option<f32>,
    /// Directory of static UI files served at `/`.
    #[arg(long, env = "DDX_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, env = "DDX_CATALOG")]
    pub catalog: Option<PathBuf>,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::Explain(a) => explain_cmd(a, out),
        Command::Serve(a) => serve_cmd(a, out),
    }
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let catalog = a.catalog.load()?;
    let records =
        generate_dataset(&catalog, a.patients as usize, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    save_dataset(&a.out, &records).map_err(|e| io_err(&a.out, e))?;
    let counts = class_counts(&records);
    let present = counts.iter().filter(|&&c| c > 0).count();
    let (min, max) = (counts.iter().min().unwrap_or(&0), counts.iter().max().unwrap_or(&0));
    say(out, format_args!("wrote {} patients to {}", records.len(), a.out.display()))?;
    say(out, format_args!("classes present: {present}/{}  per-class min {min} max {max}", catalog.len()))
}

fn load_examples(
    path: &Path,
    catalog: &PathologyCatalog,
    max_len: usize,
) -> Result<Vec<ddx_core::train::Example>, CliError> {
    let records = load_dataset(path).map_err(|e| io_err(path, e))?;
    let vocab = Vocabulary::from_catalog(catalog);
    encode_records(&records, &vocab, max_len).map_err(|e| io_err(path, e))
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let catalog = a.catalog.load()?;
    let vocab = Vocabulary::from_catalog(&catalog);
    let mut model_config = ModelConfig::new(vocab.len());
    model_config.lora = LoraConfig {
        rank: a.lora_rank as usize,
        alpha: a.lora_alpha,
        dropout: a.lora_dropout,
        ..LoraConfig::default()
    };
    let mut config = TrainConfig::new(a.task);
    if let Some(e) = a.epochs {
        config.epochs = e as usize;
    }
    config.batch_size = a.batch_size as usize;
    config.learning_rate = a.learning_rate;
    config.weight_decay = a.weight_decay;
    config.seed = a.seed;

    let targets: Vec<&str> = model_config.lora.targets.iter().map(|t| t.short_name()).collect();
    say(
        out,
        format_args!(
            "task={} epochs={} batch_size={} lora_rank={} lora_alpha={} lora_dropout={} lora_targets={} learning_rate={} weight_decay={} seed={}",
            config.task,
            config.epochs,
            config.batch_size,
            model_config.lora.rank,
            model_config.lora.alpha,
            model_config.lora.dropout,
            targets.join(","),
            config.learning_rate,
            config.weight_decay,
            config.seed
        ),
    )?;

    let model = ModelState::new(model_config.clone(), a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let (trainable, total) = model.param_counts();
    say(
        out,
        format_args!("parameters: {trainable} trainable of {total} ({:.2}%)", 100.0 * trainable as f64 / total as f64),
    )?;
    let examples = load_examples(&a.data, &catalog, model_config.max_seq_len)?;
    let outcome = train_with(model, &examples, &config, |_, _| {}).map_err(|e| match e {
        TrainError::NonFinite { step } => CliError::NonFinite { step },
        TrainError::Validation(m) => CliError::Usage(m),
        other => CliError::Failed(other.to_string()),
    })?;
    for (i, loss) in outcome.epoch_losses.iter().enumerate() {
        say(out, format_args!("epoch {} mean loss {loss:.6}", i + 1))?;
    }
    save_checkpoint(&a.out, &outcome.checkpoint).map_err(|e| io_err(&a.out, e))?;
    if let Some(h) = &a.history {
        save_history_csv(h, &outcome.checkpoint.history).map_err(|e| io_err(h, e))?;
    }
    let last = outcome.epoch_losses.last().copied().unwrap_or(f32::NAN);
    say(out, format_args!("final epoch-mean loss {last:.6}"))?;
    say(out, format_args!("checkpoint written to {}", a.out.display()))
}

fn open_checkpoint(path: &Path, catalog: &PathologyCatalog) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("{}: checkpoint not found", path.display())));
    }
    let ckpt = load_checkpoint(path).map_err(|e| io_err(path, e))?;
    let vocab = Vocabulary::from_catalog(catalog).len();
    if ckpt.model.config().vocab_size != vocab {
        return Err(CliError::Mismatch(format!(
            "{} was trained with a vocabulary of {}, this catalog gives {vocab}",
            path.display(),
            ckpt.model.config().vocab_size
        )));
    }
    Ok(ckpt)
}

fn require_task(ckpt: &Checkpoint, expected: Task, path: &Path) -> Result<(), CliError> {
    if ckpt.task == expected {
        Ok(())
    } else {
        Err(CliError::Mismatch(format!(
            "{} is a {} checkpoint, this needs a {expected} checkpoint",
            path.display(),
            ckpt.task
        )))
    }
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let catalog = a.catalog.load()?;
    let ckpt = open_checkpoint(&a.checkpoint, &catalog)?;
    if let Some(t) = a.task {
        require_task(&ckpt, t, &a.checkpoint)?;
    }
    let examples = load_examples(&a.data, &catalog, ckpt.model.config().max_seq_len)?;
    let report = match ckpt.task {
        Task::Pathology => evaluate_pathology(&ckpt.model, &examples, a.averaging),
        Task::Ddx => evaluate_ddx(&ckpt.model, &examples, a.threshold, a.averaging),
    }
    .map_err(|e| CliError::Failed(e.to_string()))?;
    let names: Vec<&str> = catalog.pathologies.iter().map(|p| p.name.as_str()).collect();
    write!(out, "{}", report.to_table(&names)).map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(p) = &a.json {
        std::fs::write(p, report.to_json()).map_err(|e| io_err(p, e))?;
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let catalog = a.catalog.load()?;
    let ckpt = open_checkpoint(&a.checkpoint, &catalog)?;
    require_task(&ckpt, Task::Ddx, &a.checkpoint)?;
    let examples = load_examples(&a.data, &catalog, ckpt.model.config().max_seq_len)?;
    let rows = threshold_sweep(&ckpt.model, &examples, &a.thresholds.0, a.averaging)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let file = std::fs::File::create(&a.out).map_err(|e| io_err(&a.out, e))?;
    write_sweep_csv(std::io::BufWriter::new(file), &rows).map_err(|e| io_err(&a.out, e))?;
    let mut table = Vec::new();
    write_sweep_csv(&mut table, &rows).map_err(|e| CliError::Io(e.to_string()))?;
    out.write_all(&table).map_err(|e| CliError::Io(e.to_string()))?;
    say(out, format_args!("sweep written to {}", a.out.display()))
}

/// Model text for an explain input file.
fn explain_text(value: serde_json::Value, catalog: &PathologyCatalog) -> Result<String, CliError> {
    if let Some(text) = value.get("text").and_then(|t| t.as_str()) {
        return Ok(text.to_string());
    }
    if value.get("answers").is_some() {
        let s: Submission = serde_json::from_value(value).map_err(|e| CliError::Usage(e.to_string()))?;
        let answers = validate_and_normalize(&s.answers, catalog).map_err(|errs| {
            let list: Vec<String> = errs.iter().map(|e| format!("{}: {}", e.field, e.reason)).collect();
            CliError::Usage(format!("invalid answers: {}", list.join("; ")))
        })?;
        return Ok(serialize_answers(&answers));
    }
    let record: PatientRecord = serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("input is not a submission, a record or {{\"text\": ...}}: {e}")))?;
    Ok(serialize_record(&record))
}

fn explain_cmd(a: ExplainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let catalog = a.catalog.load()?;
    let ckpt = open_checkpoint(&a.checkpoint, &catalog)?;
    let raw = std::fs::read_to_string(&a.input).map_err(|e| io_err(&a.input, e))?;
    let value: serde_json::Value = serde_json::from_str(&raw).map_err(|e| io_err(&a.input, e))?;
    let text = explain_text(value, &catalog)?;
    let (ids, tokens) = if text.trim().is_empty() {
        (vec![BOS_ID], vec!["<bos>".to_string()])
    } else {
        let vocab = Vocabulary::from_catalog(&catalog);
        let t = tokenize(&text, &vocab, ckpt.model.config().max_seq_len).map_err(|e| CliError::Usage(e.to_string()))?;
        (t.ids, t.tokens)
    };
    let trace = trace_attention(&ckpt.model, &ids, &tokens).map_err(|e| CliError::Mismatch(e.to_string()))?;
    let json = export_explanation(&trace).map_err(|e| CliError::Failed(e.to_string()))?;
    std::fs::write(&a.out, json).map_err(|e| io_err(&a.out, e))?;
    say(out, format_args!("explanation for {} tokens written to {}", ids.len(), a.out.display()))
}

fn serve_cmd(a: ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = ServerConfig {
        port: a.port,
        pathology_checkpoint: a.pathology_ckpt,
        ddx_checkpoint: a.ddx_ckpt,
        catalog: a.catalog,
        default_threshold: a.threshold,
        static_dir: a.static_dir,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Failed(e.to_string()))?;
    let result = runtime.block_on(ddx_server::serve(config, |addr| {
        let _ = writeln!(out, "listening on http://{addr}");
        let _ = out.flush();
    }));
    result.map_err(|e| match e {
        ddx_server::ServerError::TaskMismatch { .. } => CliError::Mismatch(e.to_string()),
        other => CliError::Io(other.to_string()),
    })
}
