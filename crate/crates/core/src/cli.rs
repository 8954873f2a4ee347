//! Command-line surface.
//!
//! Failures print a single line `error[<code>]: <message>` on stderr, where
//! `<code>` is [`Error::code`]. Argument errors exit with 2, everything else
//! with 1.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::data::{export_preprocessed, parse_fer_csv, split_by_usage, Dataset, Splits, Usage};
use crate::ensemble::{ensemble_evaluate, export_probs, EnsembleSpec, MemberSource};
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec, CLASS_NAMES};
use crate::train::{evaluate, load_checkpoint, save_checkpoint, Metrics, Trainer, TrainingConfig};

#[derive(Parser, Debug)]
#[command(name = "fercnn", version, about = "Facial expression CNNs on FER-2013")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint's best model on a split.
    Evaluate(EvaluateArgs),
    /// Write per-example class probabilities for a split.
    ExportProbs(ExportProbsArgs),
    /// Write 197x197x3 inputs for an external transfer-learning pipeline.
    ExportPreprocessed(ExportPreprocessedArgs),
    /// Soft-vote probability files and checkpoints and score the result.
    Ensemble(EnsembleArgs),
}

#[derive(Subcommand, Debug)]
enum DataCommand {
    /// Print split sizes and class counts.
    Inspect {
        /// FER-2013 CSV.
        csv: PathBuf,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl SplitArg {
    fn usage(self) -> Usage {
        match self {
            SplitArg::Train => Usage::Training,
            SplitArg::Val => Usage::PublicTest,
            SplitArg::Test => Usage::PrivateTest,
        }
    }

    fn select(self, splits: Splits) -> Dataset {
        match self {
            SplitArg::Train => splits.train,
            SplitArg::Val => splits.val,
            SplitArg::Test => splits.test,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// FER-2013 CSV.
    #[arg(long)]
    data: PathBuf,
    /// `baseline` or `five-layer`; ignored with `--resume`.
    #[arg(long, default_value = "five-layer")]
    model: String,
    /// JSON training config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config epoch limit.
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Train on a seeded random subset of this many training examples.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Validate on a seeded random subset of this many validation examples.
    #[arg(long)]
    val_limit: Option<usize>,
    /// Continue from a checkpoint written by this command.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many epochs in this invocation.
    #[arg(long)]
    epochs: Option<usize>,
    /// Checkpoint output.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history CSV output.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Also score the best model on the private test split.
    #[arg(long)]
    report_test: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// FER-2013 CSV.
    #[arg(long)]
    data: PathBuf,
    /// Split to score.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Print metrics as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ExportProbsArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// FER-2013 CSV.
    #[arg(long)]
    data: PathBuf,
    /// Split to export.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Probability CSV output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExportPreprocessedArgs {
    /// FER-2013 CSV.
    #[arg(long)]
    data: PathBuf,
    /// Restrict to one split; all examples by default.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Tensor container output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    /// Probability CSV member (repeatable).
    #[arg(long = "probs")]
    probs: Vec<PathBuf>,
    /// Checkpoint member (repeatable), evaluated on the labelled split.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    /// Comma-separated weights for `--probs` members then `--checkpoint`
    /// members; equal weights by default.
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    /// Split providing the labels.
    #[arg(long, value_enum, default_value = "test")]
    labels: SplitArg,
    /// FER-2013 CSV providing the labels.
    #[arg(long)]
    data: PathBuf,
    /// Write the combined probabilities here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print metrics as JSON.
    #[arg(long)]
    json: bool,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn cli_dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match run(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), single_line(&e.to_string()));
            1
        }
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn load_split(data: &Path, split: SplitArg) -> Result<Dataset> {
    let d = parse_fer_csv(data)?;
    let s = split.select(split_by_usage(&d));
    if s.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no {} examples",
            data.display(),
            split.usage()
        )));
    }
    Ok(s)
}

fn print_metrics(out: &mut dyn Write, m: &Metrics, as_json: bool) -> Result<()> {
    if as_json {
        writeln!(out, "{}", m.to_json()).map_err(out_err)
    } else {
        write!(out, "{}", m.render_table()).map_err(out_err)
    }
}

fn run(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Data {
            command: DataCommand::Inspect { csv, json },
        } => inspect(&csv, json, out),
        Command::Train(a) => run_train(a, out),
        Command::Evaluate(a) => {
            let split = load_split(&a.data, a.split)?;
            let trainer = load_checkpoint::<f32>(&a.checkpoint)?;
            let mut model = trainer.best_model().clone();
            let m = evaluate(&mut model, &split, trainer.config.eval_batch_size)?;
            print_metrics(out, &m, a.json)
        }
        Command::ExportProbs(a) => {
            let split = load_split(&a.data, a.split)?;
            let trainer = load_checkpoint::<f32>(&a.checkpoint)?;
            let mut model = trainer.best_model().clone();
            let p = export_probs(&mut model, &split, &a.out)?;
            writeln!(out, "wrote {} rows to {}", p.len(), a.out.display()).map_err(out_err)
        }
        Command::ExportPreprocessed(a) => {
            let d = parse_fer_csv(&a.data)?;
            let d = match a.split {
                Some(s) => s.select(split_by_usage(&d)),
                None => d,
            };
            export_preprocessed(&d, &a.out)?;
            writeln!(out, "wrote {} tensors to {}", d.len(), a.out.display()).map_err(out_err)
        }
        Command::Ensemble(a) => run_ensemble(a, out),
    }
}

fn inspect(csv: &Path, as_json: bool, out: &mut dyn Write) -> Result<()> {
    let d = parse_fer_csv(csv)?;
    let sizes = d.split_sizes();
    let counts = d.class_counts();
    for w in d.canonical_deviations() {
        log::warn!("{w}");
    }
    if as_json {
        let v = json!({
            "total": d.len(),
            "splits": {"Training": sizes[0], "PublicTest": sizes[1], "PrivateTest": sizes[2]},
            "class_counts": counts,
            "sha256": d.digest,
        });
        return writeln!(out, "{v}").map_err(out_err);
    }
    let w = |e| out_err(e);
    writeln!(out, "examples     {}", d.len()).map_err(w)?;
    writeln!(
        out,
        "splits       Training {} / PublicTest {} / PrivateTest {}",
        sizes[0], sizes[1], sizes[2]
    )
    .map_err(w)?;
    for (name, c) in CLASS_NAMES.iter().zip(counts) {
        writeln!(out, "  {name:<10} {c}").map_err(w)?;
    }
    writeln!(out, "sha256       {}", d.digest).map_err(w)
}

fn run_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut trainer = match &a.resume {
        Some(path) => load_checkpoint::<f32>(path)?,
        None => {
            let mut cfg = match &a.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    TrainingConfig::from_json(&text)?
                }
                None => TrainingConfig::default(),
            };
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            if let Some(n) = a.max_epochs {
                cfg.max_epochs = n;
            }
            let model = Model::<f32>::from_seed(ModelSpec::by_name(&a.model)?, cfg.seed)?;
            Trainer::new(model, cfg)?
        }
    };
    let seed = trainer.config.seed;
    let splits = split_by_usage(&parse_fer_csv(&a.data)?);
    let train = match a.train_limit {
        Some(n) => splits.train.random_subset(n, seed),
        None => splits.train,
    };
    let val = match a.val_limit {
        Some(n) => splits.val.random_subset(n, seed),
        None => splits.val,
    };
    log::info!(
        "training {} on {} examples, validating on {}",
        trainer.model.spec().name,
        train.len(),
        val.len()
    );

    let mut budget = a.epochs.unwrap_or(usize::MAX);
    while !trainer.is_finished() && budget > 0 {
        trainer.run_epoch(&train, &val)?;
        budget -= 1;
    }
    save_checkpoint(&trainer, &a.out)?;
    if let Some(h) = &a.history {
        trainer.state.save_history_csv(h)?;
    }
    let s = &trainer.state;
    writeln!(
        out,
        "epochs {}  best epoch {}  best val_acc {}  stopped early {}",
        s.epoch,
        s.best_epoch.map_or("n/a".to_string(), |e| e.to_string()),
        s.best_val_acc.map_or("n/a".to_string(), |v| format!("{v:.4}")),
        s.stopped_early
    )
    .map_err(out_err)?;
    if a.report_test {
        let mut best = trainer.best_model().clone();
        let m = evaluate(&mut best, &splits.test, trainer.config.eval_batch_size)?;
        writeln!(out, "test accuracy {:.4}", m.accuracy).map_err(out_err)?;
    }
    Ok(())
}

fn run_ensemble(a: EnsembleArgs, out: &mut dyn Write) -> Result<()> {
    let sources: Vec<MemberSource> = a
        .probs
        .into_iter()
        .map(MemberSource::Probs)
        .chain(a.checkpoints.into_iter().map(MemberSource::Checkpoint))
        .collect();
    if sources.is_empty() {
        return Err(Error::InvalidArgument("ensemble needs at least one --probs or --checkpoint".into()));
    }
    let spec = if a.weights.is_empty() {
        EnsembleSpec::equal(sources)
    } else {
        if a.weights.len() != sources.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} members",
                a.weights.len(),
                sources.len()
            )));
        }
        EnsembleSpec {
            members: sources.into_iter().zip(a.weights).collect(),
        }
    };
    let split = load_split(&a.data, a.labels)?;
    let result = ensemble_evaluate(&spec, &split)?;
    if let Some(path) = &a.out {
        result.probs.save(path)?;
    }
    if a.json {
        let members: Vec<_> = result.member_metrics.iter().map(|m| m.accuracy).collect();
        let mut v = result.metrics.to_json();
        v["member_accuracy"] = json!(members);
        return writeln!(out, "{v}").map_err(out_err);
    }
    for (i, m) in result.member_metrics.iter().enumerate() {
        writeln!(out, "member {i} accuracy {:.4}", m.accuracy).map_err(out_err)?;
    }
    print_metrics(out, &result.metrics, false)
}
