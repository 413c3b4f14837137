//! Automatic evaluation of transferred text.
//!
//! Everything here judges outputs from the outside, independently of the
//! models that produced them: an n-gram attribute classifier trained on
//! raw text (never on latents), corpus-level BLEU against references, a
//! Kneser-Ney trigram language model for perplexity, and a PCA projection
//! of latent vectors for inspection.

mod bleu;
mod classifier;
mod lm;
mod pca;

pub use bleu::corpus_bleu;
pub use classifier::{eval_accuracy, train_eval_classifier, EvalClassifier, EvalClfParams};
pub use lm::{train_lm, NGramLM};
pub use pca::{project_latents, projection_csv, raw_latents_export, Projection};

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("{candidates} candidates but {references} reference sets")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("projection needs at least 3 points, got {got}")]
    TooFewPoints { got: usize },
    #[error("{what}: expected {want} components, got {got}")]
    DimMismatch {
        what: &'static str,
        want: usize,
        got: usize,
    },
    #[error("hyperparameters: {0}")]
    BadHyperParams(String),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Aggregate automatic metrics over one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Fraction of sentences whose predicted attributes all round to the
    /// target. In [0, 1].
    pub acc: f64,
    /// Corpus BLEU in [0, 100].
    pub bleu: f64,
    /// Corpus perplexity under the trigram model, > 0.
    pub ppl: f64,
}
