//! `fgim`: latent-space text attribute transfer from the command line.
//!
//! Every subcommand reads one configuration file and works inside its
//! `output_dir`. A full run is `train-ae`, `train-clf`, then any of
//! `transfer`, `sweep`, `eval`, or `export-latents`. All computation is
//! 64-bit, so a repeated command with the same config, seed, and data
//! writes byte-identical artifacts.

use std::io::BufRead;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fgim_core::config::{parse_config, RunConfig};
use fgim_core::fgim::TransferResult;
use fgim_core::pipeline::{
    eval_command, export_latents_command, load_models, sweep_command, train_ae_command,
    train_clf_command, transfer_command, PipelineError,
};
use fgim_core::textdata::tokenize;

const EXIT_CODES: &str = "exit codes:
  0  success
  2  usage errors, including a malformed --target vector
  3  configuration file errors
  4  dataset errors (missing splits, malformed files, count mismatches)
  5  missing or unreadable checkpoint
  6  checkpoint incompatible with the configured model shape
  7  training or numeric failure
  8  evaluation errors
  9  failure writing artifacts";

#[derive(Parser)]
#[command(
    name = "fgim",
    about = "Latent-space text attribute transfer",
    after_help = EXIT_CODES
)]
struct Cli {
    /// Run configuration file.
    #[arg(short, long, global = true, default_value = "config.ini")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the autoencoder; writes ae.ckpt and ae_training.csv.
    TrainAe,
    /// Train the attribute classifier on frozen-autoencoder latents;
    /// writes classifier.ckpt and classifier_training.csv.
    TrainClf,
    /// Rewrite sentences toward a target attribute vector.
    Transfer {
        /// Comma-separated per-aspect targets in [0, 1], e.g. "1.0" or
        /// "1.0,0.0".
        #[arg(long)]
        target: String,
        /// Sentences to rewrite, one per line. Stdin when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Where to write rewritten sentences. Stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Where to write per-sentence edit traces as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Transfer the test split once per candidate weight; writes sweep.csv.
    Sweep,
    /// Score a transfer output against the test split; writes eval.csv.
    Eval {
        /// Transferred sentences, one per line, aligned with the test
        /// split's order.
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Project test-split latents to 2-D; writes latents_2d.csv and
    /// latents_raw.txt.
    ExportLatents,
}

#[derive(Debug)]
enum CliError {
    Pipeline(PipelineError),
    BadTarget(String),
    Io(PathBuf, std::io::Error),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Pipeline(e) => write!(f, "{e}"),
            CliError::BadTarget(what) => write!(f, "--target: {what}"),
            CliError::Io(path, e) => write!(f, "{}: {e}", path.display()),
        }
    }
}

fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::BadTarget(_) => 2,
        CliError::Io(..) => 9,
        CliError::Pipeline(e) => pipeline_code(e),
    }
}

fn ae_code(e: &fgim_core::autoencoder::AutoencoderError) -> u8 {
    use fgim_core::autoencoder::AutoencoderError as Ae;
    match e {
        Ae::BadParamShape { .. } | Ae::ParamCount { .. } | Ae::MissingParam { .. } => 6,
        _ => 7,
    }
}

fn clf_code(e: &fgim_core::latent_classifier::ClassifierError) -> u8 {
    use fgim_core::latent_classifier::ClassifierError as Clf;
    match e {
        Clf::BadParamShape { .. }
        | Clf::ParamCount { .. }
        | Clf::MissingParam { .. }
        | Clf::DimMismatch { .. } => 6,
        _ => 7,
    }
}

fn pipeline_code(err: &PipelineError) -> u8 {
    use fgim_core::fgim::FgimError;
    match err {
        PipelineError::Config(_) => 3,
        PipelineError::TextData(_)
        | PipelineError::MissingSplit(_)
        | PipelineError::LengthMismatch { .. } => 4,
        PipelineError::Checkpoint(_) => 5,
        PipelineError::Autoencoder(e) => ae_code(e),
        PipelineError::Classifier(e) => clf_code(e),
        PipelineError::Fgim(FgimError::BadConfig(_)) => 3,
        PipelineError::Fgim(FgimError::Autoencoder(e)) => ae_code(e),
        PipelineError::Fgim(FgimError::Classifier(e)) => clf_code(e),
        PipelineError::Fgim(FgimError::Eval(_)) => 8,
        PipelineError::Fgim(FgimError::TextData(_)) => 4,
        PipelineError::Eval(_) => 8,
        PipelineError::Io { .. } => 9,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if let CliError::Pipeline(e) = &err {
                let mut source = std::error::Error::source(e);
                while let Some(cause) = source {
                    eprintln!("  caused by: {cause}");
                    source = cause.source();
                }
            }
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = parse_config(&cli.config).map_err(PipelineError::from)?;
    match cli.command {
        Command::TrainAe => train_ae(&cfg),
        Command::TrainClf => train_clf(&cfg),
        Command::Transfer { target, input, output, trace } => {
            run_transfer(&cfg, &target, input, output, trace)
        }
        Command::Sweep => {
            let models = load_models::<f64>(&cfg)?;
            let (_, csv) = sweep_command(&models, &cfg)?;
            print!("{csv}");
            Ok(())
        }
        Command::Eval { candidates } => run_eval(&cfg, &candidates),
        Command::ExportLatents => {
            let models = load_models::<f64>(&cfg)?;
            let (proj, _) = export_latents_command(&models, &cfg)?;
            print!("{proj}");
            Ok(())
        }
    }
}

fn train_ae(cfg: &RunConfig) -> Result<(), CliError> {
    let (_, stats) = train_ae_command::<f64>(cfg)?;
    for s in &stats {
        println!("epoch {} train_loss {:.6} dev_loss {:.6}", s.epoch, s.train_loss, s.dev_loss);
    }
    Ok(())
}

fn train_clf(cfg: &RunConfig) -> Result<(), CliError> {
    let (_, stats) = train_clf_command::<f64>(cfg)?;
    for s in &stats {
        println!(
            "epoch {} train_loss {:.6} dev_accuracy {:.4}",
            s.epoch, s.train_loss, s.dev_accuracy
        );
    }
    Ok(())
}

fn parse_target(raw: &str) -> Result<Vec<f64>, CliError> {
    let mut out = Vec::new();
    for part in raw.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| CliError::BadTarget(format!("{part:?} is not a number")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::BadTarget(format!("{v} is outside [0, 1]")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::BadTarget("target vector is empty".into()));
    }
    Ok(out)
}

fn read_sentences(input: Option<&PathBuf>) -> Result<Vec<Vec<String>>, CliError> {
    let text = match input {
        Some(path) => {
            std::fs::read_to_string(path).map_err(|e| CliError::Io(path.clone(), e))?
        }
        None => {
            let mut buf = String::new();
            for line in std::io::stdin().lock().lines() {
                let line = line.map_err(|e| CliError::Io(PathBuf::from("<stdin>"), e))?;
                buf.push_str(&line);
                buf.push('\n');
            }
            buf
        }
    };
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(tokenize)
        .collect())
}

fn run_transfer(
    cfg: &RunConfig,
    target: &str,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    trace: Option<PathBuf>,
) -> Result<(), CliError> {
    let target = parse_target(target)?;
    let sentences = read_sentences(input.as_ref())?;
    let models = load_models::<f64>(cfg)?;
    let results = transfer_command(&models, cfg, &sentences, &target)?;

    let rendered: String = results
        .iter()
        .map(|r| r.decoded_tokens.join(" ") + "\n")
        .collect();
    match &output {
        Some(path) => std::fs::write(path, &rendered).map_err(|e| CliError::Io(path.clone(), e))?,
        None => print!("{rendered}"),
    }
    if let Some(path) = &trace {
        let mut lines = String::new();
        for r in &results {
            lines.push_str(&trace_line(r, cfg.fgim.threshold));
            lines.push('\n');
        }
        std::fs::write(path, lines).map_err(|e| CliError::Io(path.clone(), e))?;
    }
    let ok = results.iter().filter(|r| r.success).count();
    eprintln!("{ok} of {} edits met the threshold", results.len());
    Ok(())
}

/// One sentence's full edit record. Holds every per-iteration field, so
/// weight ordering, per-weight decay, and the success condition can all be
/// re-checked from the file alone.
fn trace_line(r: &TransferResult<f64>, threshold: f64) -> String {
    let rows: Vec<serde_json::Value> = r
        .trace
        .rows
        .iter()
        .map(|row| {
            serde_json::json!({
                "weight_index": row.weight_index,
                "inner_iter": row.inner_iter,
                "weight": row.weight,
                "edit_norm": row.edit_norm,
                "classifier_output": row.classifier_output,
                "loss": row.loss,
            })
        })
        .collect();
    serde_json::json!({
        "source": r.source_tokens.join(" "),
        "output": r.decoded_tokens.join(" "),
        "target": r.target,
        "threshold": threshold,
        "success": r.success,
        "succeeded_weight": r.trace.succeeded_weight,
        "rows": rows,
    })
    .to_string()
}

fn run_eval(cfg: &RunConfig, candidates: &PathBuf) -> Result<(), CliError> {
    let sentences = read_sentences(Some(candidates))?;
    let models = load_models::<f64>(cfg)?;
    let report = eval_command(&models, cfg, &sentences)?;
    println!("acc {}", report.acc);
    println!("bleu {}", report.bleu);
    println!("ppl {}", report.ppl);
    Ok(())
}
