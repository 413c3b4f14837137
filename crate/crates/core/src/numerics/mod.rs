//! Dense matrices and reverse-mode differentiation on an append-only tape.
//!
//! Everything is two-dimensional and row-major: a scalar is 1x1, a vector is
//! 1xN, and a token batch is laid out as one row per position. Models build a
//! fresh [`Tape`] per forward pass, call [`Tape::backward`] on a scalar loss,
//! and read gradients back by variable handle. All computation is generic
//! over [`Real`] so the same graph runs in f32 for training and f64 for
//! gradient checks and determinism audits.

mod adam;
pub mod gradcheck;
mod rng;
mod tape;

pub use adam::{adam_update, AdamParams, AdamState};
pub use rng::{derive_seed, fnv1a, seeded_rng, standard_normal, xavier_init};
pub use tape::{Tape, Var};

use std::collections::HashMap;

/// Scalar type the whole crate is generic over. Implemented for f32 and f64.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssignOps
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Width tag used by checkpoints and config (`"f32"` / `"f64"`).
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch, left is {lrows}x{lcols}, right is {rrows}x{rcols}")]
    ShapeMismatch {
        op: &'static str,
        lrows: usize,
        lcols: usize,
        rrows: usize,
        rcols: usize,
    },
    #[error("{op}: expected {expected}, got {rows}x{cols}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{op}: a {rows}x{cols} tensor holds {want} values, got {got}")]
    WrongLen {
        op: &'static str,
        rows: usize,
        cols: usize,
        want: usize,
        got: usize,
    },
    #[error("{op}: index {index} out of range, limit {limit}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("{op}: {what}")]
    Domain { op: &'static str, what: String },
    #[error("backward was already run on this tape")]
    BackwardTwice,
    #[error("backward needs a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
}

/// Row-major matrix with an optional gradient buffer of the same shape.
/// The gradient buffer exists exactly when `requires_grad` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::WrongLen {
                op: "tensor",
                rows,
                cols,
                want: rows * cols,
                got: data.len(),
            });
        }
        Ok(Tensor {
            rows,
            cols,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    /// Marks the tensor as a trainable parameter and allocates its gradient.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![T::zero(); self.data.len()]);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Overwrites the gradient buffer. `None` writes zeros, so an optimizer
    /// step after a graph that never touched this parameter decays cleanly.
    pub fn set_grad(&mut self, g: Option<&[T]>) {
        let buf = self
            .grad
            .get_or_insert_with(|| vec![T::zero(); self.data.len()]);
        match g {
            Some(src) => {
                debug_assert_eq!(src.len(), buf.len());
                buf.copy_from_slice(src);
            }
            None => buf.iter_mut().for_each(|v| *v = T::zero()),
        }
        self.requires_grad = true;
    }

    /// Casts values (not gradients) into another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let data = self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect();
        let mut t = Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
            grad: None,
            requires_grad: false,
        };
        if self.requires_grad {
            t = t.with_grad();
        }
        t
    }
}

/// Named parameter collection with a stable insertion order. The order fixes
/// optimizer slot layout and checkpoint entry order, so training stays
/// deterministic and archives round-trip bit for bit.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a parameter. Names are unique; reusing one is a programming
    /// error in model assembly, so it panics rather than returning.
    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let slot = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor.with_grad());
        self.index.insert(name.to_string(), slot);
        slot
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        let slot = self.index[name];
        &self.tensors[slot]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let slot = self.index[name];
        &mut self.tensors[slot]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Insertion-order slot of a parameter, usable as an index into a
    /// parallel list of bound tape variables.
    pub fn slot(&self, name: &str) -> usize {
        self.index[name]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, t) in self.iter() {
            out.insert(name, t.cast());
        }
        out
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_wrong_length() {
        let err = Tensor::<f32>::new(2, 3, vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, NumericsError::WrongLen { want: 6, got: 5, .. }));
    }

    #[test]
    fn with_grad_allocates_matching_buffer() {
        let t = Tensor::<f64>::zeros(3, 2).with_grad();
        assert!(t.requires_grad());
        assert_eq!(t.grad().unwrap().len(), 6);
    }

    #[test]
    fn store_preserves_insertion_order() {
        let mut store = ParamStore::<f32>::new();
        store.insert("b", Tensor::zeros(1, 2));
        store.insert("a", Tensor::zeros(2, 2));
        let names: Vec<&str> = store.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(store.param_count(), 6);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn store_rejects_duplicate_names() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::zeros(1, 1));
        store.insert("w", Tensor::zeros(1, 1));
    }

    #[test]
    fn cast_round_trips_exactly_for_f32_values() {
        let t = Tensor::<f32>::new(1, 3, vec![0.5, -1.25, 3.0]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t.data(), back.data());
    }
}
