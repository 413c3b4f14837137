//! Run orchestration: the sequence of load, train, checkpoint, edit, and
//! score steps behind each command-line subcommand, shared with the
//! integration tests so both drive the exact same code.
//!
//! Every step re-derives the vocabulary from the training split with the
//! configured limits, so separately-invoked commands agree on token ids
//! without a serialized vocabulary artifact. Randomness comes from
//! per-phase streams of the run seed; two invocations with the same
//! config and data are bit-identical in 64-bit mode.

use std::path::{Path, PathBuf};

use crate::autoencoder::{train_autoencoder, AutoEncoder, AutoencoderError, EpochStats};
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::config::{serialize, ConfigError, RunConfig};
use crate::evalsuite::{
    corpus_bleu, eval_accuracy, project_latents, projection_csv, raw_latents_export,
    train_eval_classifier, train_lm, EvalClassifier, EvalClfParams, EvalError, EvalReport,
    NGramLM,
};
use crate::fgim::{sweep_degrees, transfer, FgimError, SweepRow, TransferResult};
use crate::latent_classifier::{
    train_classifier, ClassifierError, ClfEpochStats, LatentClassifier, LatentExample,
};
use crate::numerics::{derive_seed, Real};
use crate::textdata::{
    batch_iter, load_dataset, Corpus, DatasetSplits, TextDataError, Vocab,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    TextData(#[from] TextDataError),
    #[error(transparent)]
    Autoencoder(#[from] AutoencoderError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Fgim(#[from] FgimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset has no {0} split")]
    MissingSplit(&'static str),
    #[error("{candidates} candidate sentences for {references} reference items")]
    LengthMismatch { candidates: usize, references: usize },
}

/// Fixed artifact names inside a run's output directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn ae_checkpoint(&self) -> PathBuf {
        self.dir.join("ae.ckpt")
    }

    pub fn clf_checkpoint(&self) -> PathBuf {
        self.dir.join("classifier.ckpt")
    }

    pub fn ae_log(&self) -> PathBuf {
        self.dir.join("ae_training.csv")
    }

    pub fn clf_log(&self) -> PathBuf {
        self.dir.join("classifier_training.csv")
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.dir.join("sweep.csv")
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.dir.join("eval.csv")
    }

    pub fn projection_csv(&self) -> PathBuf {
        self.dir.join("latents_2d.csv")
    }

    pub fn raw_latents(&self) -> PathBuf {
        self.dir.join("latents_raw.txt")
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.dir.join("config.ini")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the dataset named by the config and derives the vocabulary from
/// its training split.
pub fn load_data(cfg: &RunConfig) -> Result<(DatasetSplits, Vocab), PipelineError> {
    let splits = load_dataset(&cfg.data.dir, cfg.data.layout, &cfg.data.attrs, cfg.ae.max_len)?;
    let sentences: Vec<Vec<&str>> = splits
        .train
        .items
        .iter()
        .map(|it| it.tokens.iter().map(String::as_str).collect())
        .collect();
    let vocab = Vocab::build(&sentences, cfg.data.min_count, cfg.data.max_vocab)?;
    Ok((splits, vocab))
}

fn dev_of(splits: &DatasetSplits) -> Result<&Corpus, PipelineError> {
    splits.dev.as_ref().ok_or(PipelineError::MissingSplit("dev"))
}

fn test_of(splits: &DatasetSplits) -> Result<&Corpus, PipelineError> {
    splits.test.as_ref().ok_or(PipelineError::MissingSplit("test"))
}

/// Trains the autoencoder and writes its checkpoint, loss log, and a
/// normalized config snapshot.
pub fn train_ae_command<T: Real>(
    cfg: &RunConfig,
) -> Result<(AutoEncoder<T>, Vec<EpochStats>), PipelineError> {
    let (splits, vocab) = load_data(cfg)?;
    let dev = dev_of(&splits)?;
    let seed = derive_seed(cfg.seed, "pipeline-ae");
    let (model, stats) = train_autoencoder::<T>(&splits.train, dev, &vocab, &cfg.ae, seed)?;

    let art = Artifacts::new(&cfg.output_dir);
    write_file(&art.config_snapshot(), &serialize(cfg))?;
    let mut log = String::from("epoch,train_loss,dev_loss\n");
    for s in &stats {
        log.push_str(&format!("{},{},{}\n", s.epoch, s.train_loss, s.dev_loss));
    }
    write_file(&art.ae_log(), &log)?;
    save_checkpoint(model.params(), art.ae_checkpoint())?;
    Ok((model, stats))
}

/// Restores the autoencoder from its checkpoint. Shape compatibility with
/// the config's dimensions and the vocabulary is established here, from
/// the archived tensors themselves.
pub fn load_ae<T: Real>(cfg: &RunConfig, vocab: &Vocab) -> Result<AutoEncoder<T>, PipelineError> {
    let store = load_checkpoint(Artifacts::new(&cfg.output_dir).ae_checkpoint())?;
    Ok(AutoEncoder::from_store(cfg.ae.clone(), vocab.len(), store)?)
}

/// (latent, attribute target) pairs for every item of a corpus, encoded in
/// fixed-size batches.
pub fn latent_dataset<T: Real>(
    ae: &AutoEncoder<T>,
    corpus: &Corpus,
    vocab: &Vocab,
) -> Result<Vec<LatentExample<T>>, PipelineError> {
    let mut out = Vec::with_capacity(corpus.len());
    for batch in batch_iter(corpus, vocab, 64, false, 0) {
        let latents = ae.encode_batch(&batch)?;
        for (b, z) in latents.into_iter().enumerate() {
            let attrs = batch.attrs[b * batch.n_aspects..(b + 1) * batch.n_aspects].to_vec();
            out.push((z, attrs));
        }
    }
    Ok(out)
}

/// Trains the latent classifier on frozen-encoder latents and writes its
/// checkpoint and accuracy log. The autoencoder is read-only here; its
/// checkpoint is untouched.
pub fn train_clf_command<T: Real>(
    cfg: &RunConfig,
) -> Result<(LatentClassifier<T>, Vec<ClfEpochStats>), PipelineError> {
    let (splits, vocab) = load_data(cfg)?;
    let dev = dev_of(&splits)?;
    let ae = load_ae::<T>(cfg, &vocab)?;
    let train_set = latent_dataset(&ae, &splits.train, &vocab)?;
    let dev_set = latent_dataset(&ae, dev, &vocab)?;
    let seed = derive_seed(cfg.seed, "pipeline-clf");
    let (clf, stats) = train_classifier(
        &train_set,
        &dev_set,
        cfg.ae.latent_dim,
        splits.train.n_aspects(),
        &cfg.classifier,
        seed,
    )?;

    let art = Artifacts::new(&cfg.output_dir);
    let mut log = String::from("epoch,train_loss,dev_accuracy\n");
    for s in &stats {
        log.push_str(&format!("{},{},{}\n", s.epoch, s.train_loss, s.dev_accuracy));
    }
    write_file(&art.clf_log(), &log)?;
    save_checkpoint(clf.params(), art.clf_checkpoint())?;
    Ok((clf, stats))
}

/// Everything a transfer-time command needs.
pub struct RunModels<T: Real> {
    pub splits: DatasetSplits,
    pub vocab: Vocab,
    pub ae: AutoEncoder<T>,
    pub clf: LatentClassifier<T>,
}

pub fn load_models<T: Real>(cfg: &RunConfig) -> Result<RunModels<T>, PipelineError> {
    let (splits, vocab) = load_data(cfg)?;
    let ae = load_ae::<T>(cfg, &vocab)?;
    let store = load_checkpoint(Artifacts::new(&cfg.output_dir).clf_checkpoint())?;
    let clf =
        LatentClassifier::from_store(cfg.ae.latent_dim, splits.train.n_aspects(), store)?;
    Ok(RunModels { splits, vocab, ae, clf })
}

/// Runs the latent edit on each tokenized sentence toward one shared
/// target vector.
pub fn transfer_command<T: Real>(
    models: &RunModels<T>,
    cfg: &RunConfig,
    sentences: &[Vec<String>],
    target: &[f64],
) -> Result<Vec<TransferResult<T>>, PipelineError> {
    let mut out = Vec::with_capacity(sentences.len());
    for tokens in sentences {
        out.push(transfer(tokens, target, &models.ae, &models.clf, &cfg.fgim, &models.vocab)?);
    }
    Ok(out)
}

/// Each attribute pushed to its opposite side: the standard transfer goal
/// for corpora labeled with the source attribute.
pub fn flip_targets(attrs: &[f64]) -> Vec<f64> {
    attrs.iter().map(|&a| 1.0 - a).collect()
}

/// Independent scoring models, trained once per run on the training split.
pub struct EvalModels<T: Real> {
    pub clf: EvalClassifier<T>,
    pub lm: NGramLM,
}

pub fn build_eval_models<T: Real>(
    cfg: &RunConfig,
    train: &Corpus,
) -> Result<EvalModels<T>, PipelineError> {
    let seed = derive_seed(cfg.seed, "pipeline-eval-clf");
    let clf = train_eval_classifier(train, &EvalClfParams::default(), seed)?;
    let sentences: Vec<Vec<&str>> = train
        .items
        .iter()
        .map(|it| it.tokens.iter().map(String::as_str).collect())
        .collect();
    let lm = train_lm(&sentences)?;
    Ok(EvalModels { clf, lm })
}

/// Transfers the test split once per candidate weight and writes the
/// per-weight metric table.
pub fn sweep_command<T: Real>(
    models: &RunModels<T>,
    cfg: &RunConfig,
) -> Result<(Vec<SweepRow>, String), PipelineError> {
    let test = test_of(&models.splits)?;
    let eval = build_eval_models::<T>(cfg, &models.splits.train)?;
    let items: Vec<&crate::textdata::CorpusItem> = test.items.iter().collect();
    let rows = sweep_degrees(
        &items,
        |attrs| flip_targets(attrs),
        &models.ae,
        &models.clf,
        &cfg.fgim,
        &models.vocab,
        &eval.clf,
        &eval.lm,
    )?;
    let csv = crate::fgim::sweep_csv(&rows);
    write_file(&Artifacts::new(&cfg.output_dir).sweep_csv(), &csv)?;
    Ok((rows, csv))
}

/// Scores transferred sentences against the test split: attribute accuracy
/// under the independent classifier (targets are the flipped test labels),
/// BLEU against references when present (sources otherwise), and language
/// model perplexity.
pub fn eval_command<T: Real>(
    models: &RunModels<T>,
    cfg: &RunConfig,
    candidates: &[Vec<String>],
) -> Result<EvalReport, PipelineError> {
    let test = test_of(&models.splits)?;
    if candidates.len() != test.len() {
        return Err(PipelineError::LengthMismatch {
            candidates: candidates.len(),
            references: test.len(),
        });
    }
    let eval = build_eval_models::<T>(cfg, &models.splits.train)?;
    let targets: Vec<Vec<f64>> = test.items.iter().map(|it| flip_targets(&it.attrs)).collect();
    let acc = eval_accuracy(candidates, &targets, &eval.clf)?;
    let references: Vec<Vec<Vec<String>>> = test
        .items
        .iter()
        .map(|it| vec![it.reference.clone().unwrap_or_else(|| it.tokens.clone())])
        .collect();
    let bleu = corpus_bleu(candidates, &references)?;
    let ppl = eval.lm.perplexity(candidates)?;
    let report = EvalReport { acc, bleu, ppl };
    let csv = format!("acc,bleu,ppl\n{},{},{}\n", report.acc, report.bleu, report.ppl);
    write_file(&Artifacts::new(&cfg.output_dir).eval_csv(), &csv)?;
    Ok(report)
}

/// Projects the test split's latents to 2-D and writes both the projection
/// CSV and the raw latent dump. Labels are the items' attribute vectors;
/// the weight column is 0 because nothing here is edited.
pub fn export_latents_command<T: Real>(
    models: &RunModels<T>,
    cfg: &RunConfig,
) -> Result<(String, String), PipelineError> {
    let test = test_of(&models.splits)?;
    let latents_t = latent_dataset(&models.ae, test, &models.vocab)?;
    let latents: Vec<Vec<f64>> = latents_t
        .iter()
        .map(|(z, _)| z.iter().map(|&v| Real::to_f64(v)).collect())
        .collect();
    let labels: Vec<String> = test
        .items
        .iter()
        .map(|it| {
            it.attrs.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("|")
        })
        .collect();
    let weights = vec![0.0; latents.len()];
    let projection = project_latents(&latents)?;
    let proj_csv = projection_csv(&projection, &labels, &weights)?;
    let raw = raw_latents_export(&latents, &labels, &weights)?;
    let art = Artifacts::new(&cfg.output_dir);
    write_file(&art.projection_csv(), &proj_csv)?;
    write_file(&art.raw_latents(), &raw)?;
    Ok((proj_csv, raw))
}
