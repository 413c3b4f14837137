//! Central finite-difference checking for tape gradients.
//!
//! The difference quotient is always evaluated on the f64 build of a graph,
//! even when the gradient under test comes from the f32 build. That isolates
//! the check from difference-quotient cancellation noise, which in f32 would
//! drown the tolerance long before a genuine adjoint bug did.

use super::tape::{Tape, Var};
use super::Real;

/// Central differences of `f` at `x0`. Step per coordinate is
/// `eps * (1 + |x|)` so widely scaled inputs are probed proportionally.
pub fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], eps: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x0.len());
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        let h = eps * (1.0 + x0[i].abs());
        x[i] = x0[i] + h;
        let up = f(&x);
        x[i] = x0[i] - h;
        let down = f(&x);
        x[i] = x0[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Largest elementwise error of `got` against `want`, relative to
/// `max(|got|, |want|, 1)`.
pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Checks the tape gradient of a scalar-valued graph against central finite
/// differences and returns the worst relative error.
///
/// `build` receives a fresh tape and the probe leaf (shape rows x cols,
/// values from `x0`) and must return a 1x1 loss. It is instantiated once at
/// the precision under test and once at f64 for the difference quotient, so
/// pass the same generic function twice.
pub fn grad_error<T: Real>(
    rows: usize,
    cols: usize,
    x0: &[f64],
    build: impl Fn(&mut Tape<T>, Var) -> Var,
    build64: impl Fn(&mut Tape<f64>, Var) -> Var,
) -> f64 {
    assert_eq!(x0.len(), rows * cols);

    let mut tape = Tape::<T>::new();
    let data: Vec<T> = x0.iter().map(|&v| T::from_f64(v)).collect();
    let leaf = tape.leaf(rows, cols, data, true).expect("probe leaf");
    let loss = build(&mut tape, leaf);
    assert_eq!(tape.shape(loss), (1, 1), "gradient probe needs a scalar loss");
    tape.backward(loss).expect("backward");
    let ad: Vec<f64> = tape
        .grad(leaf)
        .expect("probe leaf is tracked")
        .iter()
        .map(|&v| v.to_f64())
        .collect();

    let f = |x: &[f64]| -> f64 {
        let mut tape = Tape::<f64>::new();
        let leaf = tape.leaf(rows, cols, x.to_vec(), false).expect("probe leaf");
        let loss = build64(&mut tape, leaf);
        tape.scalar_value(loss)
    };
    let fd = finite_diff(f, x0, 1e-5);

    max_rel_err(&ad, &fd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_recovers_quadratic_gradient() {
        // f(x) = x0^2 + 3 x1, grad = (2 x0, 3)
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let g = finite_diff(f, &[2.0, -1.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-6);
        assert!((g[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn rel_err_uses_unit_floor() {
        assert!((max_rel_err(&[1e-9], &[0.0]) - 1e-9).abs() < 1e-24);
        assert!((max_rel_err(&[200.0], &[100.0]) - 0.5).abs() < 1e-12);
    }
}
