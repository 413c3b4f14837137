//! Gradient-driven latent edits (fast gradient iterative modification).
//!
//! Given a latent z and a target attribute vector, repeatedly step z
//! against the gradient of the attribute loss until the classifier's
//! prediction lands within a threshold of the target. Candidate step
//! sizes are tried smallest first, each restarting from the original z,
//! so the first success is also the most conservative edit; within one
//! weight the step size decays geometrically. A failed run returns the
//! lowest-loss iterate seen, flagged as a failure.

use crate::autoencoder::{AutoEncoder, AutoencoderError};
use crate::evalsuite::{corpus_bleu, eval_accuracy, EvalClassifier, EvalError, NGramLM};
use crate::latent_classifier::{ClassifierError, LatentClassifier, LatentGrad, LossForm};
use crate::numerics::Real;
use crate::textdata::{CorpusItem, TextDataError, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum FgimError {
    #[error("config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Autoencoder(#[from] AutoencoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    TextData(#[from] TextDataError),
}

/// Edit schedule: candidate weights tried in ascending order, per-weight
/// geometric decay, the success threshold on |target - prediction|, and
/// the inner iteration budget per weight.
#[derive(Clone, Debug, PartialEq)]
pub struct FgimConfig {
    pub weights: Vec<f64>,
    pub decay: f64,
    pub threshold: f64,
    pub s_steps: usize,
}

impl Default for FgimConfig {
    fn default() -> Self {
        FgimConfig {
            weights: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            decay: 0.9,
            threshold: 0.001,
            s_steps: 30,
        }
    }
}

impl FgimConfig {
    pub fn validate(&self) -> Result<(), FgimError> {
        if self.weights.is_empty() {
            return Err(FgimError::BadConfig("weight set must not be empty".into()));
        }
        for pair in self.weights.windows(2) {
            if pair[1] <= pair[0] {
                return Err(FgimError::BadConfig(format!(
                    "weights must be strictly ascending, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if self.weights[0] <= 0.0 {
            return Err(FgimError::BadConfig("weights must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(FgimError::BadConfig(format!(
                "decay {} must lie strictly between 0 and 1",
                self.decay
            )));
        }
        if self.threshold <= 0.0 {
            return Err(FgimError::BadConfig("threshold must be positive".into()));
        }
        if self.s_steps == 0 {
            return Err(FgimError::BadConfig("s_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Anything that can score a latent vector against an attribute target
/// and differentiate that score with respect to the latent. The trained
/// latent classifier is the production implementation; tests substitute
/// analytic toys.
pub trait LatentScorer<T: Real> {
    fn n_aspects(&self) -> usize;
    fn classify(&self, z: &[T]) -> Result<Vec<T>, ClassifierError>;
    fn loss_and_grad(&self, z: &[T], target: &[f64]) -> Result<LatentGrad<T>, ClassifierError>;
}

impl<T: Real> LatentScorer<T> for LatentClassifier<T> {
    fn n_aspects(&self) -> usize {
        LatentClassifier::n_aspects(self)
    }

    fn classify(&self, z: &[T]) -> Result<Vec<T>, ClassifierError> {
        LatentClassifier::classify(self, z)
    }

    fn loss_and_grad(&self, z: &[T], target: &[f64]) -> Result<LatentGrad<T>, ClassifierError> {
        self.grad_wrt_latent(z, target, LossForm::Extended)
    }
}

/// A classifier scored under an explicit loss form, for runs that keep
/// the one-sided loss for comparison.
pub struct FormScorer<'a, T: Real> {
    pub classifier: &'a LatentClassifier<T>,
    pub form: LossForm,
}

impl<T: Real> LatentScorer<T> for FormScorer<'_, T> {
    fn n_aspects(&self) -> usize {
        self.classifier.n_aspects()
    }

    fn classify(&self, z: &[T]) -> Result<Vec<T>, ClassifierError> {
        self.classifier.classify(z)
    }

    fn loss_and_grad(&self, z: &[T], target: &[f64]) -> Result<LatentGrad<T>, ClassifierError> {
        self.classifier.grad_wrt_latent(z, target, self.form)
    }
}

/// One recorded edit iteration: the effective weight, the distance moved
/// from the original latent, and the classifier's view of the new point.
#[derive(Clone, Debug)]
pub struct TraceRow<T> {
    pub weight_index: usize,
    pub inner_iter: usize,
    pub weight: f64,
    pub edit_norm: f64,
    pub classifier_output: Vec<T>,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct EditTrace<T> {
    pub rows: Vec<TraceRow<T>>,
    /// Index into the weight set that produced success, or None if every
    /// weight ran out of iterations.
    pub succeeded_weight: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct EditOutcome<T> {
    pub z_edited: Vec<T>,
    pub success: bool,
    pub trace: EditTrace<T>,
}

/// Full sentence-level transfer artifact.
#[derive(Clone, Debug)]
pub struct TransferResult<T> {
    pub source_tokens: Vec<String>,
    pub target: Vec<f64>,
    pub success: bool,
    pub z_source: Vec<T>,
    pub z_edited: Vec<T>,
    pub decoded_tokens: Vec<String>,
    pub trace: EditTrace<T>,
}

fn l2_distance<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn satisfies<T: Real>(prediction: &[T], target: &[f64], threshold: f64) -> bool {
    prediction
        .iter()
        .zip(target)
        .all(|(&p, &t)| (t - p.to_f64()).abs() < threshold)
}

/// One gradient step: z - weight * d(loss)/dz.
pub fn fgim_step<T: Real>(
    z: &[T],
    target: &[f64],
    weight: f64,
    scorer: &impl LatentScorer<T>,
) -> Result<Vec<T>, FgimError> {
    if weight <= 0.0 {
        return Err(FgimError::BadConfig(format!("step weight {weight} must be positive")));
    }
    let g = scorer.loss_and_grad(z, target)?;
    let w = T::from_f64(weight);
    Ok(z.iter().zip(&g.grad).map(|(&zi, &gi)| zi - w * gi).collect())
}

/// The full edit schedule. Each candidate weight starts over from the
/// original z; after every step the prediction is checked against the
/// target and the effective weight decays. First success returns at once,
/// so a success at weight i proves no larger weight was tried.
pub fn fgim_edit<T: Real>(
    z: &[T],
    target: &[f64],
    config: &FgimConfig,
    scorer: &impl LatentScorer<T>,
) -> Result<EditOutcome<T>, FgimError> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut best: Option<(f64, Vec<T>)> = None;

    for (weight_index, &w0) in config.weights.iter().enumerate() {
        let mut z_star = z.to_vec();
        let mut weight = w0;
        // Gradient at the starting point; shared by every weight's first
        // step since they all restart from z.
        let mut state = scorer.loss_and_grad(&z_star, target)?;
        for inner_iter in 0..config.s_steps {
            let w = T::from_f64(weight);
            for (zi, &gi) in z_star.iter_mut().zip(&state.grad) {
                *zi = *zi - w * gi;
            }
            state = scorer.loss_and_grad(&z_star, target)?;
            let loss = state.loss.to_f64();
            rows.push(TraceRow {
                weight_index,
                inner_iter,
                weight,
                edit_norm: l2_distance(&z_star, z),
                classifier_output: state.prediction.clone(),
                loss,
            });
            if satisfies(&state.prediction, target, config.threshold) {
                return Ok(EditOutcome {
                    z_edited: z_star,
                    success: true,
                    trace: EditTrace { rows, succeeded_weight: Some(weight_index) },
                });
            }
            if best.as_ref().map_or(true, |(b, _)| loss < *b) {
                best = Some((loss, z_star.clone()));
            }
            weight *= config.decay;
        }
    }
    let (_, z_best) = best.expect("s_steps >= 1 guarantees at least one iterate");
    Ok(EditOutcome {
        z_edited: z_best,
        success: false,
        trace: EditTrace { rows, succeeded_weight: None },
    })
}

/// Sentence in, sentence out: encode, edit the latent, greedy-decode.
pub fn transfer<T: Real>(
    tokens: &[String],
    target: &[f64],
    ae: &AutoEncoder<T>,
    scorer: &impl LatentScorer<T>,
    config: &FgimConfig,
    vocab: &Vocab,
) -> Result<TransferResult<T>, FgimError> {
    let max_len = ae.hyperparams().max_len;
    let ids = vocab.encode(tokens, max_len);
    let z_source = ae.encode_latent(&ids)?;
    let outcome = fgim_edit(&z_source, target, config, scorer)?;
    let decoded_ids = ae.greedy_decode(&outcome.z_edited, max_len)?;
    let decoded_tokens = vocab.decode(&decoded_ids)?;
    Ok(TransferResult {
        source_tokens: tokens.to_vec(),
        target: target.to_vec(),
        success: outcome.success,
        z_source,
        z_edited: outcome.z_edited,
        decoded_tokens,
        trace: outcome.trace,
    })
}

/// Aggregate metrics for one modification weight in a sweep.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub weight: f64,
    pub acc: f64,
    pub bleu: f64,
    pub ppl: f64,
    pub mean_edit_norm: f64,
    pub success_rate: f64,
}

/// Runs transfer over a sample once per candidate weight (as a singleton
/// weight set) and reports attribute accuracy, BLEU, perplexity, mean
/// edit distance, and the success rate. BLEU is scored against the items'
/// references when every item has one, otherwise against the sources.
#[allow(clippy::too_many_arguments)]
pub fn sweep_degrees<T: Real>(
    items: &[&CorpusItem],
    target_rule: impl Fn(&[f64]) -> Vec<f64>,
    ae: &AutoEncoder<T>,
    scorer: &impl LatentScorer<T>,
    base: &FgimConfig,
    vocab: &Vocab,
    eval_clf: &EvalClassifier<T>,
    lm: &NGramLM,
) -> Result<Vec<SweepRow>, FgimError> {
    base.validate()?;
    if items.is_empty() {
        return Err(FgimError::Eval(EvalError::EmptyInput("sweep sample")));
    }
    let use_references = items.iter().all(|it| it.reference.is_some());
    let mut out = Vec::with_capacity(base.weights.len());
    for &weight in &base.weights {
        let config = FgimConfig { weights: vec![weight], ..base.clone() };
        let mut outputs: Vec<Vec<String>> = Vec::with_capacity(items.len());
        let mut targets: Vec<Vec<f64>> = Vec::with_capacity(items.len());
        let mut norm_sum = 0.0;
        let mut successes = 0usize;
        for item in items {
            let target = target_rule(&item.attrs);
            let result = transfer(&item.tokens, &target, ae, scorer, &config, vocab)?;
            norm_sum += l2_distance(&result.z_edited, &result.z_source);
            successes += usize::from(result.success);
            outputs.push(result.decoded_tokens);
            targets.push(target);
        }
        let acc = eval_accuracy(&outputs, &targets, eval_clf)?;
        let references: Vec<Vec<Vec<String>>> = items
            .iter()
            .map(|it| {
                let tokens = if use_references {
                    it.reference.as_ref().expect("all items carry references").clone()
                } else {
                    it.tokens.clone()
                };
                vec![tokens]
            })
            .collect();
        let bleu = corpus_bleu(&outputs, &references)?;
        let ppl = lm.perplexity(&outputs)?;
        out.push(SweepRow {
            weight,
            acc,
            bleu,
            ppl,
            mean_edit_norm: norm_sum / items.len() as f64,
            success_rate: successes as f64 / items.len() as f64,
        });
    }
    Ok(out)
}

/// Renders sweep rows as CSV with the fixed header.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("weight,acc,bleu,ppl,mean_edit_norm,success_rate\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.weight, r.acc, r.bleu, r.ppl, r.mean_edit_norm, r.success_rate
        ));
    }
    out
}
