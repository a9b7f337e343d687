//! Synthetic long-tailed floor datasets for tests and benchmarks.
//!
//! Each sample draws a latent storey position `t = c + noise` for its class
//! `c` and embeds it through fixed random sinusoids plus feature noise, so
//! neighbouring classes overlap and the class order is recoverable but not
//! linear in the features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::head::model::Sample;
use crate::head::{FloorLabel, RoofLabel, NUM_CLASSES};

/// Images per floor count 1..=18 in the reference Munich collection.
pub const REFERENCE_FLOOR_COUNTS: [usize; NUM_CLASSES] =
    [835, 1535, 1126, 1594, 784, 441, 103, 70, 66, 48, 48, 33, 33, 18, 30, 24, 12, 27];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    /// Samples drawn per class, indexed by class.
    pub class_counts: [usize; NUM_CLASSES],
    /// Standard deviation of the latent position, in classes.
    pub latent_noise: f64,
    pub feature_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Class counts proportional to the reference collection, scaled to about `total` samples
    /// with at least one sample per class.
    pub fn long_tail(dim: usize, total: usize, seed: u64) -> Self {
        let sum: usize = REFERENCE_FLOOR_COUNTS.iter().sum();
        let mut class_counts = [0; NUM_CLASSES];
        for (c, &n) in REFERENCE_FLOOR_COUNTS.iter().enumerate() {
            class_counts[c] = ((n as f64 * total as f64 / sum as f64).round() as usize).max(1);
        }
        Self { dim, class_counts, latent_noise: 0.6, feature_noise: 0.3, seed }
    }
}

/// Samples in class order; callers shuffle or split as needed.
pub fn generate(spec: &SyntheticSpec) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // The embedding is fixed per seed so train and test draws from the same
    // spec share it.
    let freqs: Vec<(f64, f64)> =
        (0..spec.dim).map(|_| (rng.gen_range(0.05..0.6), rng.gen_range(0.0..std::f64::consts::TAU))).collect();
    let latent = Normal::new(0.0, spec.latent_noise.max(1e-12)).expect("finite std");
    let noise = Normal::new(0.0, spec.feature_noise.max(1e-12)).expect("finite std");
    let mut out = Vec::with_capacity(spec.class_counts.iter().sum());
    for (c, &n) in spec.class_counts.iter().enumerate() {
        for _ in 0..n {
            let t = c as f64 + latent.sample(&mut rng);
            let features = freqs.iter().map(|&(w, phi)| (w * t + phi).cos() + noise.sample(&mut rng)).collect();
            // Taller buildings are more often flat-roofed.
            let p_flat = 0.2 + 0.6 * c as f64 / (NUM_CLASSES - 1) as f64;
            let roof = Some(if rng.gen_bool(p_flat) { RoofLabel::Flat } else { RoofLabel::Nonflat });
            out.push(Sample { features, label: FloorLabel::new(c as i64).expect("class in range"), roof });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts_total() {
        assert_eq!(REFERENCE_FLOOR_COUNTS.iter().sum::<usize>(), 6827);
    }

    #[test]
    fn long_tail_proportions() {
        let spec = SyntheticSpec::long_tail(8, 6827, 1);
        assert_eq!(spec.class_counts, REFERENCE_FLOOR_COUNTS);
        let small = SyntheticSpec::long_tail(8, 100, 1);
        assert!(small.class_counts.iter().all(|&n| n >= 1));
        assert_eq!(small.class_counts[1], 22);
    }

    #[test]
    fn generation_is_seeded() {
        let spec = SyntheticSpec::long_tail(4, 200, 7);
        let a = generate(&spec);
        assert_eq!(a, generate(&spec));
        assert_eq!(a.len(), spec.class_counts.iter().sum::<usize>());
        assert!(a.iter().all(|s| s.features.len() == 4 && s.features.iter().all(|v| v.is_finite())));
        let other = generate(&SyntheticSpec { seed: 8, ..spec });
        assert_ne!(a[0].features, other[0].features);
    }
}
