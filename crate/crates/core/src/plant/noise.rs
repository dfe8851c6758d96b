use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Distribution of a scalar white-noise sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseDistribution {
    #[default]
    Gaussian,
    /// `±sqrt(variance)` with equal probability.
    Rademacher,
    /// Identically zero; used to force a noise-free plant.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub distribution: NoiseDistribution,
    pub variance: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// Unit-variance Gaussian plant noise.
    pub fn plant(seed: u64) -> Self {
        Self {
            distribution: NoiseDistribution::Gaussian,
            variance: 1.0,
            seed,
        }
    }

    pub fn zero(seed: u64) -> Self {
        Self {
            distribution: NoiseDistribution::Zero,
            variance: 0.0,
            seed,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.distribution {
            NoiseDistribution::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                z * self.variance.sqrt()
            }
            NoiseDistribution::Rademacher => {
                if rng.random::<bool>() {
                    self.variance.sqrt()
                } else {
                    -self.variance.sqrt()
                }
            }
            NoiseDistribution::Zero => 0.0,
        }
    }
}

/// Which of the two per-rollout streams to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Plant = 0,
    Exploration = 1,
}

/// Counter-based generator for `(seed, rollout, kind)`; distinct triples give
/// independent, order-free streams so rollouts can run in any order.
pub fn stream_rng(seed: u64, rollout: u64, kind: StreamKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rollout.wrapping_mul(2).wrapping_add(kind as u64));
    rng
}
