//! Independent attribute classifier over raw text.
//!
//! A deliberately separate judge for transfer outputs: hashed bags of
//! 1- and 2-grams feed averaged feature embeddings into a single linear
//! layer with per-aspect sigmoids. It trains on training text and labels
//! only and never sees a latent vector, so its verdicts cannot inherit
//! the latent classifier's blind spots.

use rand::Rng;

use crate::numerics::{
    derive_seed, fnv1a, seeded_rng, xavier_init, AdamParams, AdamState, ParamStore, Real, Tape,
    Tensor, Var,
};
use crate::textdata::Corpus;

use super::EvalError;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalClfParams {
    /// Feature embedding width.
    pub dim: usize,
    /// Number of hash buckets shared by 1- and 2-grams.
    pub hash_size: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
}

impl Default for EvalClfParams {
    fn default() -> Self {
        EvalClfParams { dim: 16, hash_size: 2048, lr: 0.05, batch: 32, epochs: 10 }
    }
}

impl EvalClfParams {
    fn validate(&self) -> Result<(), EvalError> {
        if self.dim == 0 || self.hash_size == 0 {
            return Err(EvalError::BadHyperParams(
                "dim and hash_size must be positive".into(),
            ));
        }
        if self.lr <= 0.0 || self.batch == 0 || self.epochs == 0 {
            return Err(EvalError::BadHyperParams(
                "lr must be positive, batch and epochs at least 1".into(),
            ));
        }
        Ok(())
    }
}

pub struct EvalClassifier<T: Real> {
    dim: usize,
    hash_size: usize,
    n_aspects: usize,
    store: ParamStore<T>,
}

/// Bucket indices of all 1- and 2-grams of a sentence.
fn gram_buckets<S: AsRef<str>>(tokens: &[S], hash_size: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(tokens.len().saturating_mul(2));
    for (i, tok) in tokens.iter().enumerate() {
        out.push((fnv1a(tok.as_ref().bytes()) % hash_size as u64) as usize);
        if i + 1 < tokens.len() {
            let pair = tok
                .as_ref()
                .bytes()
                .chain(std::iter::once(b' '))
                .chain(tokens[i + 1].as_ref().bytes());
            out.push((fnv1a(pair) % hash_size as u64) as usize);
        }
    }
    out
}

impl<T: Real> EvalClassifier<T> {
    fn new(n_aspects: usize, params: &EvalClfParams, seed: u64) -> Result<Self, EvalError> {
        params.validate()?;
        if n_aspects == 0 {
            return Err(EvalError::BadHyperParams("n_aspects must be positive".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        store.insert("emb", xavier_init(params.hash_size, params.dim, &mut rng));
        store.insert("head.w", xavier_init(params.dim, n_aspects, &mut rng));
        store.insert("head.b", Tensor::zeros(1, n_aspects));
        Ok(EvalClassifier {
            dim: params.dim,
            hash_size: params.hash_size,
            n_aspects,
            store,
        })
    }

    pub fn n_aspects(&self) -> usize {
        self.n_aspects
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.store.tensors().iter().map(|t| tape.param(t)).collect()
    }

    /// Pre-sigmoid logits for a batch of sentences. An empty sentence has
    /// no grams; its feature average is the zero vector and the bias term
    /// alone decides.
    fn logits_graph<S: AsRef<str>>(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        sentences: &[Vec<S>],
    ) -> Result<Var, EvalError> {
        let emb = bound[self.store.slot("emb")];
        let head_w = bound[self.store.slot("head.w")];
        let head_b = bound[self.store.slot("head.b")];
        let mut rows = Vec::with_capacity(sentences.len());
        for sent in sentences {
            let buckets = gram_buckets(sent, self.hash_size);
            if buckets.is_empty() {
                rows.push(tape.constant(1, self.dim, vec![T::zero(); self.dim])?);
            } else {
                let grams = tape.gather_rows(emb, &buckets)?;
                let sum = tape.sum_axis(grams, 0)?;
                rows.push(tape.scale(sum, T::from_f64(1.0 / buckets.len() as f64)));
            }
        }
        let features = tape.concat_rows(&rows)?;
        let out = tape.matmul(features, head_w)?;
        Ok(tape.add_bias(out, head_b)?)
    }

    /// Per-aspect probabilities for each sentence.
    pub fn predict<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Result<Vec<Vec<f64>>, EvalError> {
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let logits = self.logits_graph(&mut tape, &bound, sentences)?;
        let q = tape.sigmoid(logits);
        let qv = tape.value(q);
        let a = self.n_aspects;
        Ok((0..sentences.len())
            .map(|i| qv[i * a..(i + 1) * a].iter().map(|&p| Real::to_f64(p)).collect())
            .collect())
    }
}

/// Trains the text classifier on a corpus's tokens and attribute labels.
pub fn train_eval_classifier<T: Real>(
    corpus: &Corpus,
    params: &EvalClfParams,
    seed: u64,
) -> Result<EvalClassifier<T>, EvalError> {
    if corpus.items.is_empty() {
        return Err(EvalError::EmptyInput("evaluation classifier corpus"));
    }
    let n_aspects = corpus.items[0].attrs.len();
    let mut model = EvalClassifier::<T>::new(n_aspects, params, derive_seed(seed, "eval-clf-init"))?;
    let mut adam = AdamState::new(model.params(), AdamParams::with_lr(params.lr));
    let shuffle_base = derive_seed(seed, "eval-clf-shuffle");

    let mut order: Vec<usize> = (0..corpus.items.len()).collect();
    for epoch in 0..params.epochs {
        let mut rng = seeded_rng(shuffle_base.wrapping_add(epoch as u64));
        for i in (1..order.len()).rev() {
            let j = (rng.gen::<u64>() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        for chunk in order.chunks(params.batch) {
            let sentences: Vec<&Vec<String>> =
                chunk.iter().map(|&i| &corpus.items[i].tokens).collect();
            let sentences: Vec<Vec<&str>> = sentences
                .iter()
                .map(|s| s.iter().map(String::as_str).collect())
                .collect();
            let mut flat_y = Vec::with_capacity(chunk.len() * n_aspects);
            for &i in chunk {
                flat_y.extend(corpus.items[i].attrs.iter().map(|&v| T::from_f64(v)));
            }
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let logits = model.logits_graph(&mut tape, &bound, &sentences)?;
            let yv = tape.constant(chunk.len(), n_aspects, flat_y)?;
            // softplus(l) - y*l is the binary cross entropy on sigmoids.
            let sp = tape.softplus(logits);
            let yl = tape.mul(yv, logits)?;
            let per = tape.sub(sp, yl)?;
            let total = tape.sum_all(per);
            let mean = tape.scale(total, T::from_f64(1.0 / chunk.len() as f64));
            tape.backward(mean)?;
            if !tape.scalar_value(total).to_f64().is_finite() {
                return Err(EvalError::Diverged { epoch });
            }
            for (slot, var) in bound.iter().enumerate() {
                tape.write_grad(*var, &mut model.store.tensors_mut()[slot]);
            }
            adam.step(&mut model.store).map_err(EvalError::Numerics)?;
        }
    }
    Ok(model)
}

/// Fraction of sentences whose predictions land on the target side of
/// 0.5 for every aspect.
pub fn eval_accuracy<T: Real, S: AsRef<str>>(
    sentences: &[Vec<S>],
    targets: &[Vec<f64>],
    clf: &EvalClassifier<T>,
) -> Result<f64, EvalError> {
    if sentences.len() != targets.len() {
        return Err(EvalError::LengthMismatch {
            candidates: sentences.len(),
            references: targets.len(),
        });
    }
    if sentences.is_empty() {
        return Err(EvalError::EmptyInput("accuracy evaluation set"));
    }
    for t in targets {
        if t.len() != clf.n_aspects() {
            return Err(EvalError::DimMismatch {
                what: "target",
                want: clf.n_aspects(),
                got: t.len(),
            });
        }
    }
    let preds = clf.predict(sentences)?;
    let mut hits = 0usize;
    for (q, y) in preds.iter().zip(targets) {
        let all_match = q
            .iter()
            .zip(y)
            .all(|(&p, &t)| (p >= 0.5) == (t >= 0.5));
        if all_match {
            hits += 1;
        }
    }
    Ok(hits as f64 / sentences.len() as f64)
}
