//! Transformer autoencoder with a pooled latent vector.
//!
//! The encoder runs token embeddings plus sinusoidal positions through
//! stacked self-attention layers, adds the positional table again to the
//! result, runs a bidirectional GRU over time, applies single-head
//! scaled-dot self-attention over the GRU states, squashes with a sigmoid,
//! and sums over non-pad positions. The result is one latent vector per
//! sentence whose components each live in (0, T).
//!
//! The decoder is a standard causal Transformer conditioned on the latent
//! two ways at once: a linear projection of z is added to every input
//! embedding, and a second projection forms a one-position cross-attention
//! memory. Reconstruction uses a label-smoothed cross entropy summed over
//! non-pad positions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{
    derive_seed, seeded_rng, standard_normal, xavier_init, AdamParams, AdamState, NumericsError,
    ParamStore, Real, Tape, Tensor, Var,
};
use crate::textdata::{batch_iter, make_batch, Batch, Corpus, CorpusItem, Vocab, BOS, PAD};

const LN_EPS: f64 = 1e-5;
const MASK_OFF: f64 = -1e9;

#[derive(Debug, thiserror::Error)]
pub enum AutoencoderError {
    #[error("hyperparameters: {0}")]
    BadHyperParams(String),
    #[error("encoding needs at least one non-pad token")]
    EmptyInput,
    #[error("teacher sequence must start with BOS")]
    TeacherMissingBos,
    #[error("sequence length {len} exceeds the model maximum {max}")]
    TooLong { len: usize, max: usize },
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

/// Model dimensions and training knobs. `latent_dim` must be twice
/// `gru_hidden` because the pooler concatenates both GRU directions.
#[derive(Clone, Debug, PartialEq)]
pub struct AeHyperParams {
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub attn_dim: usize,
    pub ffn_dim: usize,
    pub gru_hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub smoothing: f64,
    pub lr: f64,
    pub batch: usize,
    pub dropout: f64,
    /// Stddev of Gaussian noise added to the latent before decoding, during
    /// training only. Zero disables it. Noise forces codes of distinct
    /// sentences apart by a margin and trains the decoder on a ball around
    /// each code instead of a single point, so moderately edited latents
    /// still decode to well-formed text.
    pub latent_noise: f64,
    pub epochs: usize,
}

impl Default for AeHyperParams {
    fn default() -> Self {
        AeHyperParams {
            embed_dim: 256,
            latent_dim: 256,
            attn_dim: 256,
            ffn_dim: 1024,
            gru_hidden: 128,
            enc_layers: 2,
            dec_layers: 2,
            heads: 4,
            max_len: 16,
            smoothing: 0.1,
            lr: 0.001,
            batch: 128,
            dropout: 0.1,
            latent_noise: 0.0,
            epochs: 10,
        }
    }
}

impl AeHyperParams {
    pub fn validate(&self) -> Result<(), AutoencoderError> {
        let bad = |msg: String| Err(AutoencoderError::BadHyperParams(msg));
        if self.latent_dim != 2 * self.gru_hidden {
            return bad(format!(
                "latent_dim {} must equal 2 * gru_hidden {}",
                self.latent_dim, self.gru_hidden
            ));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.attn_dim == 0 || self.attn_dim % self.heads != 0 {
            return bad(format!(
                "attn_dim {} must be a positive multiple of heads {}",
                self.attn_dim, self.heads
            ));
        }
        if self.ffn_dim == 0 || self.gru_hidden == 0 || self.max_len == 0 {
            return bad("all dimensions must be positive".into());
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("encoder and decoder need at least one layer".into());
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return bad(format!("smoothing {} must lie in [0, 1)", self.smoothing));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if !self.latent_noise.is_finite() || self.latent_noise < 0.0 {
            return bad(format!(
                "latent_noise {} must be finite and non-negative",
                self.latent_noise
            ));
        }
        if self.lr <= 0.0 || self.batch == 0 {
            return bad("lr must be positive and batch at least 1".into());
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug)]
enum Init {
    Xavier,
    Zero,
    One,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

pub struct AutoEncoder<T: Real> {
    hp: AeHyperParams,
    vocab_size: usize,
    store: ParamStore<T>,
    pos_table: Tensor<T>,
}

// ---- construction ----

impl<T: Real> AutoEncoder<T> {
    pub fn new(hp: AeHyperParams, vocab_size: usize, seed: u64) -> Result<Self, AutoencoderError> {
        hp.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        for (name, rows, cols, init) in expected_params(&hp, vocab_size) {
            let tensor = match init {
                Init::Xavier => xavier_init(rows, cols, &mut rng),
                Init::Zero => Tensor::zeros(rows, cols),
                Init::One => Tensor::new(rows, cols, vec![T::one(); rows * cols])
                    .expect("shape matches data"),
            };
            store.insert(&name, tensor);
        }
        let pos_table = sinusoidal_table(hp.max_len, hp.embed_dim);
        Ok(AutoEncoder { hp, vocab_size, store, pos_table })
    }

    /// Rebuilds a model around restored parameters, validating that every
    /// expected tensor is present with the right shape and nothing extra
    /// rides along.
    pub fn from_store(
        hp: AeHyperParams,
        vocab_size: usize,
        store: ParamStore<T>,
    ) -> Result<Self, AutoencoderError> {
        hp.validate()?;
        let expected = expected_params(&hp, vocab_size);
        if store.len() != expected.len() {
            return Err(AutoencoderError::ParamCount {
                got: store.len(),
                want: expected.len(),
            });
        }
        for (name, rows, cols, _) in &expected {
            if !store.contains(name) {
                return Err(AutoencoderError::MissingParam { name: name.clone() });
            }
            let t = store.get(name);
            if t.rows() != *rows || t.cols() != *cols {
                return Err(AutoencoderError::BadParamShape {
                    name: name.clone(),
                    got_rows: t.rows(),
                    got_cols: t.cols(),
                    want_rows: *rows,
                    want_cols: *cols,
                });
            }
        }
        let pos_table = sinusoidal_table(hp.max_len, hp.embed_dim);
        Ok(AutoEncoder { hp, vocab_size, store, pos_table })
    }

    pub fn hyperparams(&self) -> &AeHyperParams {
        &self.hp
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Real>(&self) -> AutoEncoder<U> {
        AutoEncoder {
            hp: self.hp.clone(),
            vocab_size: self.vocab_size,
            store: self.store.cast(),
            pos_table: self.pos_table.cast(),
        }
    }
}

/// Every parameter the model owns, in a fixed order shared by init,
/// checkpoint validation, and optimizer slot layout.
fn expected_params(
    hp: &AeHyperParams,
    vocab_size: usize,
) -> Vec<(String, usize, usize, Init)> {
    let d = hp.embed_dim;
    let a = hp.attn_dim;
    let f = hp.ffn_dim;
    let h = hp.gru_hidden;
    let z = hp.latent_dim;
    let v = vocab_size;
    let mut out: Vec<(String, usize, usize, Init)> = Vec::new();

    out.push(("emb".into(), v, d, Init::Xavier));

    let attn_block = |out: &mut Vec<(String, usize, usize, Init)>, prefix: &str| {
        out.push((format!("{prefix}.wq"), d, a, Init::Xavier));
        out.push((format!("{prefix}.bq"), 1, a, Init::Zero));
        out.push((format!("{prefix}.wk"), d, a, Init::Xavier));
        out.push((format!("{prefix}.bk"), 1, a, Init::Zero));
        out.push((format!("{prefix}.wv"), d, a, Init::Xavier));
        out.push((format!("{prefix}.bv"), 1, a, Init::Zero));
        out.push((format!("{prefix}.wo"), a, d, Init::Xavier));
        out.push((format!("{prefix}.bo"), 1, d, Init::Zero));
    };
    let ln = |out: &mut Vec<(String, usize, usize, Init)>, name: String| {
        out.push((format!("{name}.g"), 1, d, Init::One));
        out.push((format!("{name}.b"), 1, d, Init::Zero));
    };
    let ffn = |out: &mut Vec<(String, usize, usize, Init)>, prefix: &str| {
        out.push((format!("{prefix}.w1"), d, f, Init::Xavier));
        out.push((format!("{prefix}.b1"), 1, f, Init::Zero));
        out.push((format!("{prefix}.w2"), f, d, Init::Xavier));
        out.push((format!("{prefix}.b2"), 1, d, Init::Zero));
    };

    for i in 0..hp.enc_layers {
        attn_block(&mut out, &format!("enc{i}.attn"));
        ln(&mut out, format!("enc{i}.ln1"));
        ffn(&mut out, &format!("enc{i}.ffn"));
        ln(&mut out, format!("enc{i}.ln2"));
    }
    for dir in ["f", "b"] {
        out.push((format!("gru.{dir}.wi"), d, 3 * h, Init::Xavier));
        out.push((format!("gru.{dir}.wh"), h, 3 * h, Init::Xavier));
        out.push((format!("gru.{dir}.bi"), 1, 3 * h, Init::Zero));
        out.push((format!("gru.{dir}.bh"), 1, 3 * h, Init::Zero));
    }
    out.push(("pool.wq".into(), z, z, Init::Xavier));
    out.push(("pool.wk".into(), z, z, Init::Xavier));
    out.push(("pool.wv".into(), z, z, Init::Xavier));

    out.push(("dec.zin.w".into(), z, d, Init::Xavier));
    out.push(("dec.zin.b".into(), 1, d, Init::Zero));
    out.push(("dec.mem.w".into(), z, d, Init::Xavier));
    out.push(("dec.mem.b".into(), 1, d, Init::Zero));
    for i in 0..hp.dec_layers {
        attn_block(&mut out, &format!("dec{i}.self"));
        ln(&mut out, format!("dec{i}.ln1"));
        attn_block(&mut out, &format!("dec{i}.cross"));
        ln(&mut out, format!("dec{i}.ln2"));
        ffn(&mut out, &format!("dec{i}.ffn"));
        ln(&mut out, format!("dec{i}.ln3"));
    }
    out.push(("out.w".into(), d, v, Init::Xavier));
    out.push(("out.b".into(), 1, v, Init::Zero));
    out
}

/// Sinusoidal positional table [max_len x d], computed in f64 and cast.
fn sinusoidal_table<T: Real>(max_len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(max_len * d);
    for pos in 0..max_len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10_000f64.powf(exponent);
            data.push(T::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(max_len, d, data).expect("shape matches data")
}

// ---- graph assembly ----

/// Bound tape variables for every parameter, indexed by store slot.
struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    fn get(&self, store: &ParamStore<impl Real>, name: &str) -> Var {
        self.vars[store.slot(name)]
    }
}

/// Everything the training loop needs from one forward pass.
pub(crate) struct BatchGraph {
    pub loss_sum: Var,
    pub n_tokens: f64,
    pub param_vars: Vec<Var>,
}

impl<T: Real> AutoEncoder<T> {
    fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.store.tensors().iter().map(|t| tape.param(t)).collect(),
        }
    }

    fn v(&self, bound: &Bound, name: &str) -> Var {
        bound.get(&self.store, name)
    }

    fn dropout_mask(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        drop: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NumericsError> {
        let p = self.hp.dropout;
        let Some(rng) = drop.as_deref_mut() else {
            return Ok(x);
        };
        if p <= 0.0 {
            return Ok(x);
        }
        let (m, n) = tape.shape(x);
        let keep = T::from_f64(1.0 / (1.0 - p));
        let data: Vec<T> = (0..m * n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mask = tape.constant(m, n, data)?;
        tape.mul(x, mask)
    }

    /// Multi-head attention block with residual and layer norm. `prefix`
    /// names the weights, `mem` selects cross attention over a one-row
    /// memory per item, otherwise self attention with `masks[b]` added to
    /// the score matrix of item b.
    #[allow(clippy::too_many_arguments)]
    fn attention_block(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        prefix: &str,
        ln_name: &str,
        x: Var,
        batch: usize,
        time: usize,
        masks: &[Var],
        mem: Option<Var>,
        drop: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var, AutoencoderError> {
        let heads = self.hp.heads;
        let dh = self.hp.attn_dim / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let wq = self.v(bound, &format!("{prefix}.wq"));
        let bq = self.v(bound, &format!("{prefix}.bq"));
        let wk = self.v(bound, &format!("{prefix}.wk"));
        let bk = self.v(bound, &format!("{prefix}.bk"));
        let wv = self.v(bound, &format!("{prefix}.wv"));
        let bv = self.v(bound, &format!("{prefix}.bv"));
        let wo = self.v(bound, &format!("{prefix}.wo"));
        let bo = self.v(bound, &format!("{prefix}.bo"));

        let q = tape.matmul(x, wq)?;
        let q = tape.add_bias(q, bq)?;
        let (kv_rows_per_item, k, v) = match mem {
            Some(memory) => {
                let k = tape.matmul(memory, wk)?;
                let k = tape.add_bias(k, bk)?;
                let v = tape.matmul(memory, wv)?;
                let v = tape.add_bias(v, bv)?;
                (1, k, v)
            }
            None => {
                let k = tape.matmul(x, wk)?;
                let k = tape.add_bias(k, bk)?;
                let v = tape.matmul(x, wv)?;
                let v = tape.add_bias(v, bv)?;
                (time, k, v)
            }
        };

        let mut per_item = Vec::with_capacity(batch);
        for b in 0..batch {
            let qb = tape.slice_rows(q, b * time, time)?;
            let kb = tape.slice_rows(k, b * kv_rows_per_item, kv_rows_per_item)?;
            let vb = tape.slice_rows(v, b * kv_rows_per_item, kv_rows_per_item)?;
            let mut head_outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_cols(qb, h * dh, dh)?;
                let kh = tape.slice_cols(kb, h * dh, dh)?;
                let vh = tape.slice_cols(vb, h * dh, dh)?;
                let scores = tape.matmul_nt(qh, kh)?;
                let mut scores = tape.scale(scores, scale);
                if mem.is_none() {
                    scores = tape.add(scores, masks[b])?;
                }
                let probs = tape.softmax_rows(scores);
                head_outs.push(tape.matmul(probs, vh)?);
            }
            per_item.push(tape.concat_cols(&head_outs)?);
        }
        let ctx = tape.concat_rows(&per_item)?;
        let proj = tape.matmul(ctx, wo)?;
        let proj = tape.add_bias(proj, bo)?;
        let proj = self.dropout_mask(tape, proj, drop)?;
        let sum = tape.add(x, proj)?;
        let g = self.v(bound, &format!("{ln_name}.g"));
        let b_ = self.v(bound, &format!("{ln_name}.b"));
        Ok(tape.layer_norm(sum, g, b_, T::from_f64(LN_EPS))?)
    }

    fn ffn_block(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        prefix: &str,
        ln_name: &str,
        x: Var,
        drop: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var, AutoencoderError> {
        let w1 = self.v(bound, &format!("{prefix}.w1"));
        let b1 = self.v(bound, &format!("{prefix}.b1"));
        let w2 = self.v(bound, &format!("{prefix}.w2"));
        let b2 = self.v(bound, &format!("{prefix}.b2"));
        let hid = tape.matmul(x, w1)?;
        let hid = tape.add_bias(hid, b1)?;
        let hid = tape.relu(hid);
        let out = tape.matmul(hid, w2)?;
        let out = tape.add_bias(out, b2)?;
        let out = self.dropout_mask(tape, out, drop)?;
        let sum = tape.add(x, out)?;
        let g = self.v(bound, &format!("{ln_name}.g"));
        let b_ = self.v(bound, &format!("{ln_name}.b"));
        Ok(tape.layer_norm(sum, g, b_, T::from_f64(LN_EPS))?)
    }

    /// Additive key masks, one [time x time] matrix per item: 0 on real
    /// key columns, a large negative on pad columns.
    fn key_masks(
        &self,
        tape: &mut Tape<T>,
        mask: &[f64],
        batch: usize,
        time: usize,
    ) -> Result<Vec<Var>, AutoencoderError> {
        let mut out = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut data = vec![T::zero(); time * time];
            for j in 0..time {
                if mask[b * time + j] == 0.0 {
                    for i in 0..time {
                        data[i * time + j] = T::from_f64(MASK_OFF);
                    }
                }
            }
            out.push(tape.constant(time, time, data)?);
        }
        Ok(out)
    }

    fn positions(&self, tape: &mut Tape<T>, batch: usize, time: usize) -> Result<Var, AutoencoderError> {
        let table = tape.constant(
            self.pos_table.rows(),
            self.pos_table.cols(),
            self.pos_table.data().to_vec(),
        )?;
        let ids: Vec<usize> = (0..batch).flat_map(|_| 0..time).collect();
        Ok(tape.gather_rows(table, &ids)?)
    }

    /// Encoder: ids and pad mask (flat [batch*time], item-major) to latent
    /// matrix [batch x latent_dim].
    fn encoder_graph(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        ids: &[usize],
        mask: &[f64],
        batch: usize,
        time: usize,
        drop: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var, AutoencoderError> {
        if time > self.hp.max_len {
            return Err(AutoencoderError::TooLong { len: time, max: self.hp.max_len });
        }
        let emb = self.v(bound, "emb");
        let e = tape.embedding_lookup(emb, ids)?;
        let pos = self.positions(tape, batch, time)?;
        let mut x = tape.add(e, pos)?;
        x = self.dropout_mask(tape, x, drop)?;

        let masks = self.key_masks(tape, mask, batch, time)?;
        for i in 0..self.hp.enc_layers {
            x = self.attention_block(
                tape,
                bound,
                &format!("enc{i}.attn"),
                &format!("enc{i}.ln1"),
                x,
                batch,
                time,
                &masks,
                None,
                drop,
            )?;
            x = self.ffn_block(tape, bound, &format!("enc{i}.ffn"), &format!("enc{i}.ln2"), x, drop)?;
        }

        // The GRU consumes U plus the positional table a second time.
        let s_in = tape.add(x, pos)?;
        let states = self.bigru_graph(tape, bound, s_in, mask, batch, time)?;

        // Single-head scaled-dot attention over the states, sigmoid, then a
        // masked sum over time. Every latent component lands in (0, T).
        let z_dim = self.hp.latent_dim;
        let wq = self.v(bound, "pool.wq");
        let wk = self.v(bound, "pool.wk");
        let wv = self.v(bound, "pool.wv");
        let scale = T::from_f64(1.0 / (z_dim as f64).sqrt());
        let mut z_rows = Vec::with_capacity(batch);
        for b in 0..batch {
            // states is time-major: row t*batch + b.
            let row_ids: Vec<usize> = (0..time).map(|t| t * batch + b).collect();
            let sb = tape.gather_rows(states, &row_ids)?;
            let q = tape.matmul(sb, wq)?;
            let k = tape.matmul(sb, wk)?;
            let v = tape.matmul(sb, wv)?;
            let scores = tape.matmul_nt(q, k)?;
            let scores = tape.scale(scores, scale);
            let scores = tape.add(scores, masks[b])?;
            let probs = tape.softmax_rows(scores);
            let att = tape.matmul(probs, v)?;
            let sig = tape.sigmoid(att);
            let mut keep = vec![T::zero(); time * z_dim];
            for t in 0..time {
                if mask[b * time + t] != 0.0 {
                    for c in 0..z_dim {
                        keep[t * z_dim + c] = T::one();
                    }
                }
            }
            let keep = tape.constant(time, z_dim, keep)?;
            let masked = tape.mul(sig, keep)?;
            z_rows.push(tape.sum_axis(masked, 0)?);
        }
        Ok(tape.concat_rows(&z_rows)?)
    }

    /// Bidirectional GRU over [batch*time x d] input, returning states in
    /// time-major layout [time*batch x 2*hidden]. Updates are gated by the
    /// pad mask so pad steps pass the previous state through unchanged.
    fn bigru_graph(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        mask: &[f64],
        batch: usize,
        time: usize,
    ) -> Result<Var, AutoencoderError> {
        let h = self.hp.gru_hidden;
        let mut per_dir: Vec<Vec<Var>> = Vec::with_capacity(2);
        for dir in ["f", "b"] {
            let wi = self.v(bound, &format!("gru.{dir}.wi"));
            let wh = self.v(bound, &format!("gru.{dir}.wh"));
            let bi = self.v(bound, &format!("gru.{dir}.bi"));
            let bh = self.v(bound, &format!("gru.{dir}.bh"));
            let mut state = tape.constant(batch, h, vec![T::zero(); batch * h])?;
            let mut states: Vec<Var> = vec![state; time];
            let steps: Vec<usize> = if dir == "f" {
                (0..time).collect()
            } else {
                (0..time).rev().collect()
            };
            for t in steps {
                let row_ids: Vec<usize> = (0..batch).map(|b| b * time + t).collect();
                let xt = tape.gather_rows(x, &row_ids)?;
                let gi = tape.matmul(xt, wi)?;
                let gi = tape.add_bias(gi, bi)?;
                let gh = tape.matmul(state, wh)?;
                let gh = tape.add_bias(gh, bh)?;
                let gi_r = tape.slice_cols(gi, 0, h)?;
                let gi_z = tape.slice_cols(gi, h, h)?;
                let gi_n = tape.slice_cols(gi, 2 * h, h)?;
                let gh_r = tape.slice_cols(gh, 0, h)?;
                let gh_z = tape.slice_cols(gh, h, h)?;
                let gh_n = tape.slice_cols(gh, 2 * h, h)?;
                let pre_r = tape.add(gi_r, gh_r)?;
                let r = tape.sigmoid(pre_r);
                let pre_z = tape.add(gi_z, gh_z)?;
                let zg = tape.sigmoid(pre_z);
                let gated = tape.mul(r, gh_n)?;
                let pre_n = tape.add(gi_n, gated)?;
                let n = tape.tanh(pre_n);
                // candidate = (1 - zg) * n + zg * state
                let zn = tape.mul(zg, n)?;
                let zs = tape.mul(zg, state)?;
                let cand = tape.sub(n, zn)?;
                let cand = tape.add(cand, zs)?;
                // Pad steps keep the old state: state + m * (cand - state).
                let mut gate = vec![T::zero(); batch * h];
                for b in 0..batch {
                    if mask[b * time + t] != 0.0 {
                        for c in 0..h {
                            gate[b * h + c] = T::one();
                        }
                    }
                }
                let gate = tape.constant(batch, h, gate)?;
                let delta = tape.sub(cand, state)?;
                let gated_delta = tape.mul(gate, delta)?;
                state = tape.add(state, gated_delta)?;
                states[t] = state;
            }
            per_dir.push(states);
        }
        let mut rows = Vec::with_capacity(time);
        for t in 0..time {
            rows.push(tape.concat_cols(&[per_dir[0][t], per_dir[1][t]])?);
        }
        Ok(tape.concat_rows(&rows)?)
    }

    /// Decoder: latent matrix [batch x latent] and teacher ids (flat,
    /// item-major, starting with BOS) to logits [batch*time x vocab].
    fn decoder_graph(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        z: Var,
        teacher: &[usize],
        batch: usize,
        time: usize,
        drop: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var, AutoencoderError> {
        if time > self.hp.max_len {
            return Err(AutoencoderError::TooLong { len: time, max: self.hp.max_len });
        }
        let emb = self.v(bound, "emb");
        let zin_w = self.v(bound, "dec.zin.w");
        let zin_b = self.v(bound, "dec.zin.b");
        let mem_w = self.v(bound, "dec.mem.w");
        let mem_b = self.v(bound, "dec.mem.b");

        let zin = tape.matmul(z, zin_w)?;
        let zin = tape.add_bias(zin, zin_b)?;
        let mem = tape.matmul(z, mem_w)?;
        let mem = tape.add_bias(mem, mem_b)?;

        let e = tape.embedding_lookup(emb, teacher)?;
        let pos = self.positions(tape, batch, time)?;
        let mut x = tape.add(e, pos)?;
        let z_all = tape.repeat_rows(zin, time);
        x = tape.add(x, z_all)?;
        x = self.dropout_mask(tape, x, drop)?;

        let mut causal = vec![T::zero(); time * time];
        for i in 0..time {
            for j in i + 1..time {
                causal[i * time + j] = T::from_f64(MASK_OFF);
            }
        }
        let causal = tape.constant(time, time, causal)?;
        let masks = vec![causal; batch];

        for i in 0..self.hp.dec_layers {
            x = self.attention_block(
                tape,
                bound,
                &format!("dec{i}.self"),
                &format!("dec{i}.ln1"),
                x,
                batch,
                time,
                &masks,
                None,
                drop,
            )?;
            x = self.attention_block(
                tape,
                bound,
                &format!("dec{i}.cross"),
                &format!("dec{i}.ln2"),
                x,
                batch,
                time,
                &masks,
                Some(mem),
                drop,
            )?;
            x = self.ffn_block(tape, bound, &format!("dec{i}.ffn"), &format!("dec{i}.ln3"), x, drop)?;
        }
        let out_w = self.v(bound, "out.w");
        let out_b = self.v(bound, "out.b");
        let logits = tape.matmul(x, out_w)?;
        Ok(tape.add_bias(logits, out_b)?)
    }

    /// Full teacher-forced pass over one batch: encode, decode, smoothed
    /// loss summed over non-pad targets. `noise` carries the latent-noise
    /// stream during training; None decodes the clean latent.
    pub(crate) fn batch_graph(
        &self,
        tape: &mut Tape<T>,
        batch: &Batch,
        mut drop: Option<&mut ChaCha8Rng>,
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<BatchGraph, AutoencoderError> {
        let bound = self.bind(tape);
        let b = batch.batch;
        let t = batch.time;
        let mut z = self.encoder_graph(tape, &bound, &batch.ids, &batch.mask, b, t, &mut drop)?;
        if let Some(rng) = noise {
            if self.hp.latent_noise > 0.0 {
                let data: Vec<T> = (0..b * self.hp.latent_dim)
                    .map(|_| T::from_f64(self.hp.latent_noise * standard_normal(rng)))
                    .collect();
                let jitter = tape.constant(b, self.hp.latent_dim, data)?;
                z = tape.add(z, jitter)?;
            }
        }

        // Teacher: BOS then the target shifted right; targets are the
        // encoded ids themselves (EOS included).
        let mut teacher = vec![PAD; b * t];
        for bi in 0..b {
            teacher[bi * t] = BOS;
            for k in 1..t {
                teacher[bi * t + k] = batch.ids[bi * t + k - 1];
            }
        }
        let logits = self.decoder_graph(tape, &bound, z, &teacher, b, t, &mut drop)?;
        let (loss_sum, n_tokens) =
            smoothed_loss_graph(tape, logits, &batch.ids, self.hp.smoothing)?;
        Ok(BatchGraph { loss_sum, n_tokens, param_vars: bound.vars })
    }
}

// ---- inference entry points ----

impl<T: Real> AutoEncoder<T> {
    /// Latent vector for one id sequence. PAD entries are masked out.
    pub fn encode_latent(&self, ids: &[usize]) -> Result<Vec<T>, AutoencoderError> {
        if ids.iter().all(|&id| id == PAD) {
            return Err(AutoencoderError::EmptyInput);
        }
        let mask: Vec<f64> = ids.iter().map(|&id| if id == PAD { 0.0 } else { 1.0 }).collect();
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let z = self.encoder_graph(&mut tape, &bound, ids, &mask, 1, ids.len(), &mut None)?;
        Ok(tape.value(z).to_vec())
    }

    /// Latents for a whole batch, one row per item.
    pub fn encode_batch(&self, batch: &Batch) -> Result<Vec<Vec<T>>, AutoencoderError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let z = self.encoder_graph(
            &mut tape,
            &bound,
            &batch.ids,
            &batch.mask,
            batch.batch,
            batch.time,
            &mut None,
        )?;
        let zv = tape.value(z);
        let d = self.hp.latent_dim;
        Ok((0..batch.batch).map(|b| zv[b * d..(b + 1) * d].to_vec()).collect())
    }

    /// Per-position vocabulary logits for one teacher sequence.
    pub fn decode_logits(&self, z: &[T], teacher: &[usize]) -> Result<Tensor<T>, AutoencoderError> {
        if teacher.first() != Some(&BOS) {
            return Err(AutoencoderError::TeacherMissingBos);
        }
        if teacher.len() > self.hp.max_len {
            return Err(AutoencoderError::TooLong {
                len: teacher.len(),
                max: self.hp.max_len,
            });
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let zv = tape.constant(1, self.hp.latent_dim, z.to_vec())?;
        let logits =
            self.decoder_graph(&mut tape, &bound, zv, teacher, 1, teacher.len(), &mut None)?;
        Ok(Tensor::new(teacher.len(), self.vocab_size, tape.value(logits).to_vec())?)
    }

    /// Greedy autoregressive decode of one latent.
    pub fn greedy_decode(&self, z: &[T], max_len: usize) -> Result<Vec<usize>, AutoencoderError> {
        Ok(self.greedy_decode_batch(&[z], max_len)?.pop().expect("one row in, one row out"))
    }

    /// Greedy decode of many latents in lockstep. Each output holds the
    /// generated ids up to and including EOS (if reached), BOS excluded.
    pub fn greedy_decode_batch(
        &self,
        zs: &[&[T]],
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>, AutoencoderError> {
        let b = zs.len();
        if b == 0 {
            return Ok(Vec::new());
        }
        let max_len = max_len.min(self.hp.max_len);
        let d = self.hp.latent_dim;
        let mut z_flat = Vec::with_capacity(b * d);
        for z in zs {
            z_flat.extend_from_slice(z);
        }
        let mut seqs: Vec<Vec<usize>> = vec![vec![BOS]; b];
        let mut done = vec![false; b];
        for step in 0..max_len {
            let time = step + 1;
            let mut teacher = Vec::with_capacity(b * time);
            for seq in &seqs {
                teacher.extend_from_slice(seq);
            }
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let zv = tape.constant(b, d, z_flat.clone())?;
            let logits = self.decoder_graph(&mut tape, &bound, zv, &teacher, b, time, &mut None)?;
            let lv = tape.value(logits);
            let v = self.vocab_size;
            for bi in 0..b {
                if done[bi] {
                    // Keep feeding something harmless so rows stay aligned.
                    seqs[bi].push(crate::textdata::EOS);
                    continue;
                }
                let row = &lv[(bi * time + time - 1) * v..(bi * time + time) * v];
                let mut best = 0;
                for (idx, &score) in row.iter().enumerate() {
                    if score > row[best] {
                        best = idx;
                    }
                }
                seqs[bi].push(best);
                if best == crate::textdata::EOS {
                    done[bi] = true;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(seqs
            .into_iter()
            .map(|seq| {
                let mut out: Vec<usize> = seq.into_iter().skip(1).collect();
                if let Some(eos_at) = out.iter().position(|&id| id == crate::textdata::EOS) {
                    out.truncate(eos_at + 1);
                }
                out
            })
            .collect())
    }
}

// ---- reconstruction loss ----

/// Label-smoothed reconstruction loss on the tape: per non-pad position,
/// -[(1 - eps) * log p_target + (eps / v) * sum_i log p_i], summed.
/// Returns the 1x1 loss and the non-pad token count.
pub(crate) fn smoothed_loss_graph<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[usize],
    eps: f64,
) -> Result<(Var, f64), NumericsError> {
    let (n, v) = tape.shape(logits);
    debug_assert_eq!(targets.len(), n);
    let lp = tape.log_softmax_rows(logits);
    let picked = tape.gather_per_row(lp, targets)?;
    let total = tape.sum_axis(lp, 1)?;
    let a = tape.scale(picked, T::from_f64(-(1.0 - eps)));
    let b = tape.scale(total, T::from_f64(-(eps / v as f64)));
    let per_pos = tape.add(a, b)?;
    let mask_vals: Vec<T> = targets
        .iter()
        .map(|&t| if t == PAD { T::zero() } else { T::one() })
        .collect();
    let n_tokens = mask_vals.iter().filter(|&&m| m == T::one()).count() as f64;
    let mask = tape.constant(n, 1, mask_vals)?;
    let masked = tape.mul(per_pos, mask)?;
    Ok((tape.sum_all(masked), n_tokens))
}

/// Standalone reconstruction loss over [N x v] logits. PAD targets are
/// excluded from the sum.
pub fn reconstruction_loss<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
    eps: f64,
) -> Result<T, AutoencoderError> {
    if targets.len() != logits.rows() {
        return Err(AutoencoderError::BadParamShape {
            name: "targets".into(),
            got_rows: targets.len(),
            got_cols: 1,
            want_rows: logits.rows(),
            want_cols: 1,
        });
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(AutoencoderError::BadHyperParams(format!(
            "smoothing {eps} must lie in [0, 1)"
        )));
    }
    let mut tape = Tape::new();
    let l = tape.constant(logits.rows(), logits.cols(), logits.data().to_vec())?;
    let (loss, _) = smoothed_loss_graph(&mut tape, l, targets, eps)?;
    Ok(tape.scalar_value(loss))
}

// ---- training ----

/// Teacher-forced Adam training. Returns the model restored to its best
/// dev-loss parameters and the per-epoch loss history.
pub fn train_autoencoder<T: Real>(
    train: &Corpus,
    dev: &Corpus,
    vocab: &Vocab,
    hp: &AeHyperParams,
    seed: u64,
) -> Result<(AutoEncoder<T>, Vec<EpochStats>), AutoencoderError> {
    let mut model = AutoEncoder::<T>::new(hp.clone(), vocab.len(), derive_seed(seed, "ae-init"))?;
    let mut adam = AdamState::new(model.params(), AdamParams::with_lr(hp.lr));
    let mut drop_rng = seeded_rng(derive_seed(seed, "ae-dropout"));
    let mut noise_rng = seeded_rng(derive_seed(seed, "ae-latent-noise"));
    let shuffle_base = derive_seed(seed, "ae-shuffle");
    let mut history = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f64, ParamStore<T>)> = None;

    for epoch in 0..hp.epochs {
        let mut loss_sum = 0.0;
        let mut tok_sum = 0.0;
        for batch in batch_iter(train, vocab, hp.batch, true, shuffle_base.wrapping_add(epoch as u64)) {
            let mut tape = Tape::new();
            let graph = model.batch_graph(&mut tape, &batch, Some(&mut drop_rng), Some(&mut noise_rng))?;
            let mean = tape.scale(graph.loss_sum, T::from_f64(1.0 / graph.n_tokens));
            tape.backward(mean)?;
            let batch_loss = tape.scalar_value(graph.loss_sum).to_f64();
            if !batch_loss.is_finite() {
                return Err(AutoencoderError::Diverged { epoch });
            }
            for (slot, var) in graph.param_vars.iter().enumerate() {
                tape.write_grad(*var, &mut model.params_mut().tensors_mut()[slot]);
            }
            adam.step(model.params_mut())?;
            loss_sum += batch_loss;
            tok_sum += graph.n_tokens;
        }
        let train_loss = loss_sum / tok_sum;
        let dev_loss = evaluate_loss(&model, dev, vocab)?;
        if !dev_loss.is_finite() {
            return Err(AutoencoderError::Diverged { epoch });
        }
        if best.as_ref().map_or(true, |(b, _)| dev_loss < *b) {
            best = Some((dev_loss, model.params().clone()));
        }
        history.push(EpochStats { epoch, train_loss, dev_loss });
    }
    if let Some((_, store)) = best {
        *model.params_mut() = store;
    }
    Ok((model, history))
}

/// Mean per-token smoothed loss over a corpus, teacher-forced, no dropout.
pub fn evaluate_loss<T: Real>(
    model: &AutoEncoder<T>,
    corpus: &Corpus,
    vocab: &Vocab,
) -> Result<f64, AutoencoderError> {
    let mut loss_sum = 0.0;
    let mut tok_sum = 0.0;
    for batch in batch_iter(corpus, vocab, model.hp.batch, false, 0) {
        let mut tape = Tape::new();
        let graph = model.batch_graph(&mut tape, &batch, None, None)?;
        loss_sum += tape.scalar_value(graph.loss_sum).to_f64();
        tok_sum += graph.n_tokens;
    }
    Ok(loss_sum / tok_sum.max(1.0))
}

/// Fraction of positions greedy decoding reproduces, and the fraction of
/// sentences reproduced exactly. Positions compare the generated ids
/// against the encoded ids (EOS included), normalized by the longer length.
pub fn reconstruction_accuracy<T: Real>(
    model: &AutoEncoder<T>,
    items: &[&CorpusItem],
    vocab: &Vocab,
    max_len: usize,
) -> Result<(f64, f64), AutoencoderError> {
    let mut token_hits = 0.0;
    let mut token_total = 0.0;
    let mut exact = 0usize;
    let chunk = 64;
    for group in items.chunks(chunk) {
        let batch = make_batch(group, vocab, max_len);
        let latents = model.encode_batch(&batch)?;
        let refs: Vec<&[T]> = latents.iter().map(|z| z.as_slice()).collect();
        let decoded = model.greedy_decode_batch(&refs, max_len)?;
        for (bi, out) in decoded.iter().enumerate() {
            let target: Vec<usize> = batch.row_ids(bi)
                [..batch.lengths[bi]]
                .to_vec();
            let longest = target.len().max(out.len());
            let hits = target
                .iter()
                .zip(out.iter())
                .filter(|(a, b)| a == b)
                .count();
            token_hits += hits as f64;
            token_total += longest as f64;
            if *out == target {
                exact += 1;
            }
        }
    }
    Ok((
        token_hits / token_total.max(1.0),
        exact as f64 / items.len().max(1) as f64,
    ))
}
