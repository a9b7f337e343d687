//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use storey_core::geo::Xy;
use storey_core::head::model::Sample;
use storey_core::synthetic::{generate, SyntheticSpec};

/// `n` axis-aligned squares on a jittered grid around the origin, none
/// covering it.
pub fn street_scene(n: usize, seed: u64) -> Vec<(String, Vec<Xy>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (n as f64).sqrt().ceil() as i64 + 1;
    let mut out = Vec::with_capacity(n);
    'outer: for i in -side..=side {
        for j in -side..=side {
            if out.len() == n {
                break 'outer;
            }
            if i == 0 && j == 0 {
                continue;
            }
            let (cx, cy) = (i as f64 * 18.0 + rng.gen_range(-2.0..2.0), j as f64 * 18.0 + rng.gen_range(-2.0..2.0));
            let h = rng.gen_range(3.0..7.0);
            let ring = vec![
                Xy::new(cx - h, cy - h),
                Xy::new(cx + h, cy - h),
                Xy::new(cx + h, cy + h),
                Xy::new(cx - h, cy + h),
                Xy::new(cx - h, cy - h),
            ];
            out.push((format!("b{:03}", out.len()), ring));
        }
    }
    out
}

/// Long-tailed synthetic training set with `total` samples of `dim` features.
pub fn training_set(dim: usize, total: usize, seed: u64) -> Vec<Sample> {
    generate(&SyntheticSpec::long_tail(dim, total, seed))
}
