//! Gradient probe graphs shared by the op-level checks and the acceptance
//! suite. Each probe wires one tape operation (or a fused composite such as
//! an attention head) into a scalar via a randomized weighted reduction, so
//! a transposed or dropped adjoint cannot cancel out.

use fgim_core::numerics::{seeded_rng, Real, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ProbeKind {
    MatMul,
    MatMulRhs,
    MatMulNT,
    MatMulNTRhs,
    Add,
    Sub,
    Mul,
    AddBias,
    AddBiasRhs,
    Scale,
    AddScalar,
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
    Exp,
    Log,
    SoftmaxRows,
    LogSoftmaxRows,
    SumAll,
    SumAxis0,
    SumAxis1,
    ConcatRows,
    ConcatCols,
    SliceRows,
    SliceCols,
    GatherRows,
    GatherPerRow,
    RepeatRows,
    LayerNorm,
    LayerNormGain,
    AttentionHead,
    GruCell,
    SmoothedCrossEntropy,
}

pub const ALL_PROBES: &[ProbeKind] = &[
    ProbeKind::MatMul,
    ProbeKind::MatMulRhs,
    ProbeKind::MatMulNT,
    ProbeKind::MatMulNTRhs,
    ProbeKind::Add,
    ProbeKind::Sub,
    ProbeKind::Mul,
    ProbeKind::AddBias,
    ProbeKind::AddBiasRhs,
    ProbeKind::Scale,
    ProbeKind::AddScalar,
    ProbeKind::Sigmoid,
    ProbeKind::Tanh,
    ProbeKind::Relu,
    ProbeKind::Softplus,
    ProbeKind::Exp,
    ProbeKind::Log,
    ProbeKind::SoftmaxRows,
    ProbeKind::LogSoftmaxRows,
    ProbeKind::SumAll,
    ProbeKind::SumAxis0,
    ProbeKind::SumAxis1,
    ProbeKind::ConcatRows,
    ProbeKind::ConcatCols,
    ProbeKind::SliceRows,
    ProbeKind::SliceCols,
    ProbeKind::GatherRows,
    ProbeKind::GatherPerRow,
    ProbeKind::RepeatRows,
    ProbeKind::LayerNorm,
    ProbeKind::LayerNormGain,
    ProbeKind::AttentionHead,
    ProbeKind::GruCell,
    ProbeKind::SmoothedCrossEntropy,
];

/// Leaf shape for each probe.
pub fn leaf_shape(kind: ProbeKind) -> (usize, usize) {
    use ProbeKind::*;
    match kind {
        MatMul | MatMulNT => (3, 4),
        MatMulRhs | MatMulNTRhs => (4, 3),
        AddBias => (3, 4),
        AddBiasRhs => (1, 4),
        LayerNorm => (3, 5),
        LayerNormGain => (1, 5),
        AttentionHead => (4, 6),
        GruCell => (2, 3),
        SmoothedCrossEntropy => (3, 5),
        GatherPerRow => (3, 4),
        Relu => (4, 4),
        _ => (3, 4),
    }
}

/// Probe inputs that avoid kinks and domain edges: relu gets values away
/// from zero, everything else gets a smooth generic range.
pub fn leaf_values(kind: ProbeKind, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (r, c) = leaf_shape(kind);
    (0..r * c)
        .map(|_| {
            let v = 2.0 * rng.gen::<f64>() - 1.0;
            if kind == ProbeKind::Relu {
                // Keep a margin around the kink so finite differences stay
                // on one side of it.
                v + 0.3 * v.signum()
            } else {
                v
            }
        })
        .collect()
}

fn const_mat<T: Real>(tape: &mut Tape<T>, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Var {
    let data: Vec<T> = (0..rows * cols)
        .map(|_| T::from_f64(2.0 * rng.gen::<f64>() - 1.0))
        .collect();
    tape.constant(rows, cols, data).unwrap()
}

/// Weighted sum with mixed-sign weights bounded away from zero.
fn reduce<T: Real>(tape: &mut Tape<T>, v: Var, rng: &mut ChaCha8Rng) -> Var {
    let (r, c) = tape.shape(v);
    let data: Vec<T> = (0..r * c)
        .map(|_| {
            let mag = 0.25 + rng.gen::<f64>();
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            T::from_f64(mag * sign)
        })
        .collect();
    let w = tape.constant(r, c, data).unwrap();
    let weighted = tape.mul(v, w).unwrap();
    tape.sum_all(weighted)
}

/// Builds the probe graph for `kind` on `tape`, turning `leaf` into a 1x1
/// loss. All auxiliary values are drawn from `seed`, so the f32 and f64
/// instantiations see identical graphs.
pub fn build_probe<T: Real>(kind: ProbeKind, seed: u64, tape: &mut Tape<T>, leaf: Var) -> Var {
    use ProbeKind::*;
    let rng = &mut seeded_rng(seed.wrapping_mul(2654435761).wrapping_add(kind as u64));
    let out = match kind {
        MatMul => {
            let b = const_mat(tape, 4, 3, rng);
            tape.matmul(leaf, b).unwrap()
        }
        MatMulRhs => {
            let a = const_mat(tape, 3, 4, rng);
            tape.matmul(a, leaf).unwrap()
        }
        MatMulNT => {
            let b = const_mat(tape, 2, 4, rng);
            tape.matmul_nt(leaf, b).unwrap()
        }
        MatMulNTRhs => {
            let a = const_mat(tape, 2, 3, rng);
            tape.matmul_nt(a, leaf).unwrap()
        }
        Add => {
            let b = const_mat(tape, 3, 4, rng);
            tape.add(leaf, b).unwrap()
        }
        Sub => {
            let b = const_mat(tape, 3, 4, rng);
            tape.sub(b, leaf).unwrap()
        }
        Mul => {
            let b = const_mat(tape, 3, 4, rng);
            tape.mul(leaf, b).unwrap()
        }
        AddBias => {
            let bias = const_mat(tape, 1, 4, rng);
            tape.add_bias(leaf, bias).unwrap()
        }
        AddBiasRhs => {
            let a = const_mat(tape, 3, 4, rng);
            tape.add_bias(a, leaf).unwrap()
        }
        Scale => tape.scale(leaf, T::from_f64(-1.7)),
        AddScalar => tape.add_scalar(leaf, T::from_f64(0.4)),
        Sigmoid => tape.sigmoid(leaf),
        Tanh => tape.tanh(leaf),
        Relu => tape.relu(leaf),
        Softplus => tape.softplus(leaf),
        Exp => tape.exp(leaf).unwrap(),
        Log => {
            // Map into (0.5, 1.5) so the domain stays clear of zero.
            let scaled = tape.scale(leaf, T::from_f64(0.25));
            let shifted = tape.add_scalar(scaled, T::from_f64(1.0));
            tape.log(shifted).unwrap()
        }
        SoftmaxRows => tape.softmax_rows(leaf),
        LogSoftmaxRows => tape.log_softmax_rows(leaf),
        SumAll => tape.sum_all(leaf),
        SumAxis0 => tape.sum_axis(leaf, 0).unwrap(),
        SumAxis1 => tape.sum_axis(leaf, 1).unwrap(),
        ConcatRows => {
            let b = const_mat(tape, 2, 4, rng);
            tape.concat_rows(&[leaf, b, leaf]).unwrap()
        }
        ConcatCols => {
            let b = const_mat(tape, 3, 2, rng);
            tape.concat_cols(&[b, leaf]).unwrap()
        }
        SliceRows => tape.slice_rows(leaf, 1, 2).unwrap(),
        SliceCols => tape.slice_cols(leaf, 1, 2).unwrap(),
        GatherRows => tape.gather_rows(leaf, &[2, 0, 2, 1]).unwrap(),
        GatherPerRow => tape.gather_per_row(leaf, &[3, 0, 2]).unwrap(),
        RepeatRows => tape.repeat_rows(leaf, 3),
        LayerNorm => {
            let gain = const_mat(tape, 1, 5, rng);
            let bias = const_mat(tape, 1, 5, rng);
            tape.layer_norm(leaf, gain, bias, T::from_f64(1e-5)).unwrap()
        }
        LayerNormGain => {
            let x = const_mat(tape, 3, 5, rng);
            let bias = const_mat(tape, 1, 5, rng);
            tape.layer_norm(x, leaf, bias, T::from_f64(1e-5)).unwrap()
        }
        AttentionHead => {
            // Two-head self attention over 4 positions with a causal mask,
            // the fused path a decoder layer exercises.
            let d = 6;
            let dh = 3;
            let wq = const_mat(tape, d, d, rng);
            let wk = const_mat(tape, d, d, rng);
            let wv = const_mat(tape, d, d, rng);
            let q = tape.matmul(leaf, wq).unwrap();
            let k = tape.matmul(leaf, wk).unwrap();
            let v = tape.matmul(leaf, wv).unwrap();
            let mut mask = vec![T::zero(); 16];
            for i in 0..4 {
                for j in i + 1..4 {
                    mask[i * 4 + j] = T::from_f64(-1e9);
                }
            }
            let mask = tape.constant(4, 4, mask).unwrap();
            let scale = T::from_f64(1.0 / (dh as f64).sqrt());
            let mut heads = Vec::new();
            for h in 0..2 {
                let qh = tape.slice_cols(q, h * dh, dh).unwrap();
                let kh = tape.slice_cols(k, h * dh, dh).unwrap();
                let vh = tape.slice_cols(v, h * dh, dh).unwrap();
                let scores = tape.matmul_nt(qh, kh).unwrap();
                let scores = tape.scale(scores, scale);
                let scores = tape.add(scores, mask).unwrap();
                let probs = tape.softmax_rows(scores);
                heads.push(tape.matmul(probs, vh).unwrap());
            }
            tape.concat_cols(&heads).unwrap()
        }
        GruCell => {
            // One gated update h' = (1 - z) * n + z * h from a constant
            // input row, probing the recurrent state path.
            let hidden = 3;
            let d = 4;
            let x = const_mat(tape, 2, d, rng);
            let wir = const_mat(tape, d, hidden, rng);
            let whr = const_mat(tape, hidden, hidden, rng);
            let wiz = const_mat(tape, d, hidden, rng);
            let whz = const_mat(tape, hidden, hidden, rng);
            let win = const_mat(tape, d, hidden, rng);
            let whn = const_mat(tape, hidden, hidden, rng);
            let xr = tape.matmul(x, wir).unwrap();
            let hr = tape.matmul(leaf, whr).unwrap();
            let pre_r = tape.add(xr, hr).unwrap();
            let r = tape.sigmoid(pre_r);
            let xz = tape.matmul(x, wiz).unwrap();
            let hz = tape.matmul(leaf, whz).unwrap();
            let pre_z = tape.add(xz, hz).unwrap();
            let z = tape.sigmoid(pre_z);
            let xn = tape.matmul(x, win).unwrap();
            let hn = tape.matmul(leaf, whn).unwrap();
            let gated = tape.mul(r, hn).unwrap();
            let pre_n = tape.add(xn, gated).unwrap();
            let n = tape.tanh(pre_n);
            // h' = (1 - z) * n + z * h, written as n - z*n + z*h
            let zn = tape.mul(z, n).unwrap();
            let zh = tape.mul(z, leaf).unwrap();
            let partial = tape.sub(n, zn).unwrap();
            tape.add(partial, zh).unwrap()
        }
        SmoothedCrossEntropy => {
            // Label-smoothed token loss over 3 rows of 5 logits.
            let eps = 0.1;
            let vsize = 5.0;
            let logp = tape.log_softmax_rows(leaf);
            let picked = tape.gather_per_row(logp, &[1, 4, 0]).unwrap();
            let hit = tape.sum_all(picked);
            let total = tape.sum_all(logp);
            let a = tape.scale(hit, T::from_f64(1.0 - eps));
            let b = tape.scale(total, T::from_f64(eps / vsize));
            let s = tape.add(a, b).unwrap();
            return tape.scale(s, T::from_f64(-1.0));
        }
    };
    reduce(tape, out, rng)
}
