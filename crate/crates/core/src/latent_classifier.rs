//! Attribute classifier over latent vectors.
//!
//! Three linear layers (latent -> hidden1 -> hidden2 -> aspects) with a
//! sigmoid after every layer, so each aspect prediction lands in (0, 1)
//! independently of the others. The gradient of the attribute loss with
//! respect to the latent input is what drives latent-space edits; model
//! parameters stay frozen during that use.

use rand::Rng;

use crate::numerics::{
    derive_seed, seeded_rng, standard_normal, xavier_init, AdamParams, AdamState, NumericsError,
    ParamStore, Real, Tape, Tensor, Var,
};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("hyperparameters: {0}")]
    BadHyperParams(String),
    #[error("{what}: expected {want} components, got {got}")]
    DimMismatch {
        what: &'static str,
        want: usize,
        got: usize,
    },
    #[error("probability {value} outside (0, 1) at aspect {aspect}")]
    NotAProbability { value: f64, aspect: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("missing parameter {name}")]
    MissingParam { name: String },
    #[error("parameter {name} is {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    BadParamShape {
        name: String,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("parameter store holds {got} tensors, expected {want}")]
    ParamCount { got: usize, want: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Loss applied to the sigmoid outputs. `Extended` is the per-aspect
/// binary form -[y log q + (1-y) log(1-q)]; `OneSided` drops the
/// complement term, which leaves 0-valued targets without gradient
/// pressure and exists for comparison runs only.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum LossForm {
    #[default]
    Extended,
    OneSided,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClfHyperParams {
    pub hidden1: usize,
    pub hidden2: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Stddev of Gaussian jitter added to training latents, fresh per
    /// epoch. Zero disables it. Jitter flattens the decision surface in a
    /// band around the data, which keeps latent-space gradient steps from
    /// chasing directions no real latent ever takes. Dev evaluation always
    /// sees clean latents.
    pub input_noise: f64,
}

impl Default for ClfHyperParams {
    fn default() -> Self {
        ClfHyperParams {
            hidden1: 100,
            hidden2: 50,
            lr: 0.001,
            batch: 64,
            epochs: 20,
            input_noise: 0.0,
        }
    }
}

impl ClfHyperParams {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(ClassifierError::BadHyperParams(
                "hidden dimensions must be positive".into(),
            ));
        }
        if self.lr <= 0.0 || self.batch == 0 || self.epochs == 0 {
            return Err(ClassifierError::BadHyperParams(
                "lr must be positive, batch and epochs at least 1".into(),
            ));
        }
        if !self.input_noise.is_finite() || self.input_noise < 0.0 {
            return Err(ClassifierError::BadHyperParams(format!(
                "input_noise {} must be finite and non-negative",
                self.input_noise
            )));
        }
        Ok(())
    }
}

/// One (latent, attribute target) training pair.
pub type LatentExample<T> = (Vec<T>, Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct ClfEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

pub struct LatentClassifier<T: Real> {
    latent_dim: usize,
    n_aspects: usize,
    hidden1: usize,
    hidden2: usize,
    store: ParamStore<T>,
}

fn expected_params(
    latent_dim: usize,
    hidden1: usize,
    hidden2: usize,
    n_aspects: usize,
) -> Vec<(String, usize, usize, bool)> {
    // The bool marks weight matrices (Xavier init); biases start at zero.
    vec![
        ("l1.w".into(), latent_dim, hidden1, true),
        ("l1.b".into(), 1, hidden1, false),
        ("l2.w".into(), hidden1, hidden2, true),
        ("l2.b".into(), 1, hidden2, false),
        ("out.w".into(), hidden2, n_aspects, true),
        ("out.b".into(), 1, n_aspects, false),
    ]
}

impl<T: Real> LatentClassifier<T> {
    pub fn new(
        latent_dim: usize,
        n_aspects: usize,
        hp: &ClfHyperParams,
        seed: u64,
    ) -> Result<Self, ClassifierError> {
        hp.validate()?;
        if latent_dim == 0 || n_aspects == 0 {
            return Err(ClassifierError::BadHyperParams(
                "latent_dim and n_aspects must be positive".into(),
            ));
        }
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        for (name, rows, cols, is_weight) in
            expected_params(latent_dim, hp.hidden1, hp.hidden2, n_aspects)
        {
            let tensor = if is_weight {
                xavier_init(rows, cols, &mut rng)
            } else {
                Tensor::zeros(rows, cols)
            };
            store.insert(&name, tensor);
        }
        Ok(LatentClassifier {
            latent_dim,
            n_aspects,
            hidden1: hp.hidden1,
            hidden2: hp.hidden2,
            store,
        })
    }

    /// Rebuilds a classifier around restored parameters. Layer widths are
    /// read off the tensor shapes, then every shape is cross-checked.
    pub fn from_store(
        latent_dim: usize,
        n_aspects: usize,
        store: ParamStore<T>,
    ) -> Result<Self, ClassifierError> {
        if !store.contains("l1.w") {
            return Err(ClassifierError::MissingParam { name: "l1.w".into() });
        }
        if !store.contains("l2.w") {
            return Err(ClassifierError::MissingParam { name: "l2.w".into() });
        }
        let hidden1 = store.get("l1.w").cols();
        let hidden2 = store.get("l2.w").cols();
        let expected = expected_params(latent_dim, hidden1, hidden2, n_aspects);
        if store.len() != expected.len() {
            return Err(ClassifierError::ParamCount { got: store.len(), want: expected.len() });
        }
        for (name, rows, cols, _) in &expected {
            if !store.contains(name) {
                return Err(ClassifierError::MissingParam { name: name.clone() });
            }
            let t = store.get(name);
            if t.rows() != *rows || t.cols() != *cols {
                return Err(ClassifierError::BadParamShape {
                    name: name.clone(),
                    got_rows: t.rows(),
                    got_cols: t.cols(),
                    want_rows: *rows,
                    want_cols: *cols,
                });
            }
        }
        Ok(LatentClassifier { latent_dim, n_aspects, hidden1, hidden2, store })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn n_aspects(&self) -> usize {
        self.n_aspects
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Real>(&self) -> LatentClassifier<U> {
        LatentClassifier {
            latent_dim: self.latent_dim,
            n_aspects: self.n_aspects,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            store: self.store.cast(),
        }
    }

    fn check_latent(&self, z: &[T]) -> Result<(), ClassifierError> {
        if z.len() != self.latent_dim {
            return Err(ClassifierError::DimMismatch {
                what: "latent",
                want: self.latent_dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    fn check_target(&self, y: &[f64]) -> Result<(), ClassifierError> {
        if y.len() != self.n_aspects {
            return Err(ClassifierError::DimMismatch {
                what: "target",
                want: self.n_aspects,
                got: y.len(),
            });
        }
        Ok(())
    }

    /// Pre-sigmoid output logits for a [rows x latent_dim] input variable.
    fn logits_graph(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        z: Var,
    ) -> Result<Var, NumericsError> {
        let slot = |name: &str| bound[self.store.slot(name)];
        let h1 = tape.matmul(z, slot("l1.w"))?;
        let h1 = tape.add_bias(h1, slot("l1.b"))?;
        let h1 = tape.sigmoid(h1);
        let h2 = tape.matmul(h1, slot("l2.w"))?;
        let h2 = tape.add_bias(h2, slot("l2.b"))?;
        let h2 = tape.sigmoid(h2);
        let out = tape.matmul(h2, slot("out.w"))?;
        tape.add_bias(out, slot("out.b"))
    }

    fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.store.tensors().iter().map(|t| tape.param(t)).collect()
    }

    /// Attribute prediction q = C(z), each component in (0, 1).
    pub fn classify(&self, z: &[T]) -> Result<Vec<T>, ClassifierError> {
        self.check_latent(z)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let zv = tape.constant(1, self.latent_dim, z.to_vec())?;
        let logits = self.logits_graph(&mut tape, &bound, zv)?;
        let q = tape.sigmoid(logits);
        Ok(tape.value(q).to_vec())
    }

    /// Predictions for many latents at once, one row per input.
    pub fn classify_batch(&self, zs: &[&[T]]) -> Result<Vec<Vec<T>>, ClassifierError> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let mut flat = Vec::with_capacity(zs.len() * self.latent_dim);
        for z in zs {
            self.check_latent(z)?;
            flat.extend_from_slice(z);
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let zv = tape.constant(zs.len(), self.latent_dim, flat)?;
        let logits = self.logits_graph(&mut tape, &bound, zv)?;
        let q = tape.sigmoid(logits);
        let qv = tape.value(q);
        let a = self.n_aspects;
        Ok((0..zs.len()).map(|i| qv[i * a..(i + 1) * a].to_vec()).collect())
    }

    /// Loss and its gradient with respect to the latent input; parameters
    /// are untouched. The loss is evaluated from the pre-sigmoid logits
    /// (softplus form), which is algebraically the same function as
    /// feeding q into the probability-space loss but stays finite when a
    /// sigmoid saturates.
    pub fn grad_wrt_latent(
        &self,
        z: &[T],
        target: &[f64],
        form: LossForm,
    ) -> Result<LatentGrad<T>, ClassifierError> {
        self.check_latent(z)?;
        self.check_target(target)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let zv = tape.leaf(1, self.latent_dim, z.to_vec(), true)?;
        let logits = self.logits_graph(&mut tape, &bound, zv)?;
        let y: Vec<T> = target.iter().map(|&t| T::from_f64(t)).collect();
        let yv = tape.constant(1, self.n_aspects, y)?;
        let loss = match form {
            // softplus(l) - y*l == -[y log sigma(l) + (1-y) log(1-sigma(l))]
            LossForm::Extended => {
                let sp = tape.softplus(logits);
                let yl = tape.mul(yv, logits)?;
                let per = tape.sub(sp, yl)?;
                tape.sum_all(per)
            }
            // y * softplus(-l) == -y log sigma(l)
            LossForm::OneSided => {
                let neg = tape.scale(logits, T::from_f64(-1.0));
                let sp = tape.softplus(neg);
                let per = tape.mul(yv, sp)?;
                tape.sum_all(per)
            }
        };
        let q = tape.sigmoid(logits);
        let loss_value = tape.scalar_value(loss);
        let prediction = tape.value(q).to_vec();
        tape.backward(loss)?;
        let grad = tape.grad(zv).expect("tracked leaf has a gradient").to_vec();
        Ok(LatentGrad { grad, prediction, loss: loss_value })
    }

    /// Fraction of (example, aspect) pairs classified correctly at a 0.5
    /// threshold on both prediction and target.
    pub fn accuracy(&self, data: &[LatentExample<T>]) -> Result<f64, ClassifierError> {
        if data.is_empty() {
            return Err(ClassifierError::EmptyDataset);
        }
        let zs: Vec<&[T]> = data.iter().map(|(z, _)| z.as_slice()).collect();
        let preds = self.classify_batch(&zs)?;
        let mut correct = 0usize;
        let mut total = 0usize;
        for ((_, y), q) in data.iter().zip(&preds) {
            self.check_target(y)?;
            for (a, &t) in y.iter().enumerate() {
                let predicted = q[a].to_f64() >= 0.5;
                if predicted == (t >= 0.5) {
                    correct += 1;
                }
                total += 1;
            }
        }
        Ok(correct as f64 / total as f64)
    }
}

/// Gradient of the attribute loss at one latent, with the prediction and
/// loss value observed along the way.
#[derive(Clone, Debug)]
pub struct LatentGrad<T> {
    pub grad: Vec<T>,
    pub prediction: Vec<T>,
    pub loss: T,
}

/// Attribute loss on probabilities: the per-aspect binary form by default,
/// or the one-sided -sum y log q variant. Every q must lie strictly inside
/// (0, 1).
pub fn classifier_loss<T: Real>(
    q: &[T],
    target: &[f64],
    form: LossForm,
) -> Result<T, ClassifierError> {
    if q.len() != target.len() {
        return Err(ClassifierError::DimMismatch {
            what: "target",
            want: q.len(),
            got: target.len(),
        });
    }
    let mut loss = T::zero();
    for (a, (&qi, &yi)) in q.iter().zip(target).enumerate() {
        let qf = qi.to_f64();
        if !(qf > 0.0 && qf < 1.0) {
            return Err(ClassifierError::NotAProbability { value: qf, aspect: a });
        }
        let y = T::from_f64(yi);
        loss -= y * qi.ln();
        if form == LossForm::Extended {
            loss -= (T::one() - y) * (T::one() - qi).ln();
        }
    }
    Ok(loss)
}

/// Adam training on frozen latents. Returns the classifier restored to
/// its best dev-accuracy parameters plus the per-epoch history.
pub fn train_classifier<T: Real>(
    train: &[LatentExample<T>],
    dev: &[LatentExample<T>],
    latent_dim: usize,
    n_aspects: usize,
    hp: &ClfHyperParams,
    seed: u64,
) -> Result<(LatentClassifier<T>, Vec<ClfEpochStats>), ClassifierError> {
    if train.is_empty() || dev.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    for (z, y) in train.iter().chain(dev) {
        if z.len() != latent_dim {
            return Err(ClassifierError::DimMismatch {
                what: "latent",
                want: latent_dim,
                got: z.len(),
            });
        }
        if y.len() != n_aspects {
            return Err(ClassifierError::DimMismatch {
                what: "target",
                want: n_aspects,
                got: y.len(),
            });
        }
    }
    let mut model =
        LatentClassifier::<T>::new(latent_dim, n_aspects, hp, derive_seed(seed, "clf-init"))?;
    let mut adam = AdamState::new(model.params(), AdamParams::with_lr(hp.lr));
    let shuffle_base = derive_seed(seed, "clf-shuffle");
    let noise_base = derive_seed(seed, "clf-noise");
    let mut history = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f64, ParamStore<T>)> = None;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..hp.epochs {
        let mut rng = seeded_rng(shuffle_base.wrapping_add(epoch as u64));
        for i in (1..order.len()).rev() {
            let j = (rng.gen::<u64>() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        let mut noise_rng = seeded_rng(noise_base.wrapping_add(epoch as u64));
        let mut loss_sum = 0.0;
        let mut n_rows = 0.0;
        for chunk in order.chunks(hp.batch) {
            let b = chunk.len();
            let mut flat_z = Vec::with_capacity(b * latent_dim);
            let mut flat_y = Vec::with_capacity(b * n_aspects);
            for &i in chunk {
                flat_z.extend_from_slice(&train[i].0);
                flat_y.extend(train[i].1.iter().map(|&v| T::from_f64(v)));
            }
            if hp.input_noise > 0.0 {
                for z in flat_z.iter_mut() {
                    *z = *z + T::from_f64(hp.input_noise * standard_normal(&mut noise_rng));
                }
            }
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let zv = tape.constant(b, latent_dim, flat_z)?;
            let logits = model.logits_graph(&mut tape, &bound, zv)?;
            let yv = tape.constant(b, n_aspects, flat_y)?;
            let sp = tape.softplus(logits);
            let yl = tape.mul(yv, logits)?;
            let per = tape.sub(sp, yl)?;
            let total = tape.sum_all(per);
            let mean = tape.scale(total, T::from_f64(1.0 / b as f64));
            tape.backward(mean)?;
            let batch_loss = tape.scalar_value(total).to_f64();
            if !batch_loss.is_finite() {
                return Err(ClassifierError::Diverged { epoch });
            }
            for (slot, var) in bound.iter().enumerate() {
                tape.write_grad(*var, &mut model.params_mut().tensors_mut()[slot]);
            }
            adam.step(model.params_mut())?;
            loss_sum += batch_loss;
            n_rows += b as f64;
        }
        let dev_accuracy = model.accuracy(dev)?;
        // Ties keep the later epoch: once dev accuracy saturates, the
        // extra epochs still sharpen the confidence of the kept model.
        if best.as_ref().map_or(true, |(b, _)| dev_accuracy >= *b) {
            best = Some((dev_accuracy, model.params().clone()));
        }
        history.push(ClfEpochStats {
            epoch,
            train_loss: loss_sum / n_rows,
            dev_accuracy,
        });
    }
    if let Some((_, store)) = best {
        *model.params_mut() = store;
    }
    Ok((model, history))
}
