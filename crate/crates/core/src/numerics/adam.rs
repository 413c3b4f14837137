//! Adam optimizer with bias-corrected moment estimates.

use super::{NumericsError, ParamStore, Real};

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams { lr, ..Default::default() }
    }
}

/// One update on a single parameter buffer. `t` is the global step count,
/// starting at 1 for the first update.
pub fn adam_update<T: Real>(
    p: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    hp: &AdamParams,
) {
    debug_assert!(t >= 1);
    debug_assert_eq!(p.len(), g.len());
    let b1 = T::from_f64(hp.beta1);
    let b2 = T::from_f64(hp.beta2);
    let one = T::one();
    let lr = T::from_f64(hp.lr);
    let eps = T::from_f64(hp.eps);
    // Bias corrections are powers of fixed constants; f64 keeps them exact
    // enough for either precision.
    let bc1 = T::from_f64(1.0 - hp.beta1.powi(t as i32));
    let bc2 = T::from_f64(1.0 - hp.beta2.powi(t as i32));
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Moment buffers for every parameter of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real> {
    hp: AdamParams,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, hp: AdamParams) -> Self {
        let m = store.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        let v = store.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        AdamState { hp, t: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one step to every parameter, reading gradients from the
    /// tensors' gradient buffers. A parameter without a gradient buffer is a
    /// training-loop bug, not a valid "no update" request.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<(), NumericsError> {
        self.t += 1;
        for (slot, tensor) in store.tensors_mut().iter_mut().enumerate() {
            let g: Vec<T> = match tensor.grad() {
                Some(g) => g.to_vec(),
                None => {
                    return Err(NumericsError::Domain {
                        op: "adam_step",
                        what: format!("parameter slot {slot} has no gradient"),
                    })
                }
            };
            adam_update(
                tensor.data_mut(),
                &g,
                &mut self.m[slot],
                &mut self.v[slot],
                self.t,
                &self.hp,
            );
        }
        Ok(())
    }
}
