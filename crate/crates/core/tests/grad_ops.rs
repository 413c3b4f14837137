//! Finite-difference gradient checks for every tape operation, in both
//! precisions.

mod support;

use fgim_core::numerics::gradcheck::grad_error;
use fgim_core::numerics::seeded_rng;
use support::{build_probe, leaf_shape, leaf_values, ALL_PROBES};

#[test]
fn every_op_matches_finite_differences_in_both_precisions() {
    for &kind in ALL_PROBES {
        for seed in 0..3u64 {
            let (rows, cols) = leaf_shape(kind);
            let x0 = leaf_values(kind, &mut seeded_rng(1000 + seed));

            let err32 = grad_error::<f32>(
                rows,
                cols,
                &x0,
                |t, v| build_probe(kind, seed, t, v),
                |t, v| build_probe(kind, seed, t, v),
            );
            assert!(
                err32 < 1e-4,
                "{kind:?} seed {seed}: f32 gradient error {err32:.3e}"
            );

            let err64 = grad_error::<f64>(
                rows,
                cols,
                &x0,
                |t, v| build_probe(kind, seed, t, v),
                |t, v| build_probe(kind, seed, t, v),
            );
            assert!(
                err64 < 1e-6,
                "{kind:?} seed {seed}: f64 gradient error {err64:.3e}"
            );
        }
    }
}
