//! Seeded randomness and weight initialization.
//!
//! Every stochastic choice in the crate (init, shuffling, dropout, corpus
//! generation) flows from an explicit u64 seed through ChaCha8, so a run is
//! reproducible from its config alone. Samples are drawn in f64 and cast,
//! which keeps the f32 and f64 builds of a model starting from the same
//! underlying draw sequence.

use super::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// FNV-1a over a byte string. Used for seed derivation and feature
/// hashing; stable across platforms and runs by construction.
pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in bytes {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Folds a label into a seed so subsystems such as dropout and shuffling
/// get independent streams from one config seed.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    fnv1a(seed.to_le_bytes().into_iter().chain(stream.bytes()))
}

/// Uniform init on (-a, a) with a = sqrt(6 / (rows + cols)).
pub fn xavier_init<T: Real>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64(a * (2.0 * rng.gen::<f64>() - 1.0)))
        .collect();
    Tensor::new(rows, cols, data).expect("generated length matches shape")
}

/// Standard normal draw via Box-Muller. Always consumes exactly two
/// uniforms, so the stream position does not depend on the values drawn.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let a: Tensor<f32> = xavier_init(4, 5, &mut seeded_rng(7));
        let b: Tensor<f32> = xavier_init(4, 5, &mut seeded_rng(7));
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn different_seeds_differ() {
        let a: Tensor<f32> = xavier_init(4, 5, &mut seeded_rng(7));
        let b: Tensor<f32> = xavier_init(4, 5, &mut seeded_rng(8));
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn xavier_respects_fan_bound() {
        let rows = 30;
        let cols = 50;
        let bound = (6.0f64 / 80.0).sqrt();
        let t: Tensor<f64> = xavier_init(rows, cols, &mut seeded_rng(3));
        assert!(t.data().iter().all(|&v| v.abs() < bound));
        // 1500 uniform draws hug neither zero nor the bound.
        let mean_abs: f64 = t.data().iter().map(|v| v.abs()).sum::<f64>() / 1500.0;
        assert!(mean_abs > bound * 0.3 && mean_abs < bound * 0.7);
    }

    #[test]
    fn f32_init_is_cast_of_f64_init() {
        let a: Tensor<f64> = xavier_init(3, 3, &mut seeded_rng(11));
        let b: Tensor<f32> = xavier_init(3, 3, &mut seeded_rng(11));
        for (&x, &y) in a.data().iter().zip(b.data()) {
            assert_eq!(x as f32, y);
        }
    }

    #[test]
    fn derived_seeds_separate_streams() {
        let s1 = derive_seed(42, "dropout");
        let s2 = derive_seed(42, "shuffle");
        assert_ne!(s1, s2);
        assert_eq!(s1, derive_seed(42, "dropout"));
    }

    #[test]
    fn normal_draws_match_moments() {
        let mut rng = seeded_rng(9);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }
}
