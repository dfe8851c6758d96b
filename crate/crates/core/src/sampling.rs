//! Random problem instances for property tests and benchmarks.

use nalgebra::DMatrix;
use rand::Rng;

use crate::matrix_kit::SymMatrix;
use crate::plant::{CostWeights, SystemModel};
use crate::stability::is_ms_stabilizing;

/// Entries uniform in `[-scale, scale]`.
pub fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}

/// Symmetric with entries of `uniform_matrix`.
pub fn random_sym<R: Rng>(rng: &mut R, n: usize, scale: f64) -> SymMatrix {
    SymMatrix::symmetrize(&uniform_matrix(rng, n, n, scale))
}

/// `G G' + floor·I`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> SymMatrix {
    let g = uniform_matrix(rng, n, n, 1.0);
    SymMatrix::symmetrize(&(&g * g.transpose() + DMatrix::identity(n, n) * floor))
}

/// Plant with `A` scaled by a random factor in `[0.2, a_scale]` and noise
/// matrices of size up to `noise_scale`.
pub fn random_model<R: Rng>(rng: &mut R, n: usize, m: usize, d: usize, a_scale: f64, noise_scale: f64) -> SystemModel {
    let s = rng.random_range(0.2..=a_scale.max(0.2));
    SystemModel::new(
        uniform_matrix(rng, n, n, s),
        uniform_matrix(rng, n, n, noise_scale),
        uniform_matrix(rng, n, m, 1.0),
        uniform_matrix(rng, n, m, noise_scale),
        d,
    )
    .expect("shapes are consistent")
}

pub fn random_weights<R: Rng>(rng: &mut R, n: usize, m: usize) -> CostWeights {
    CostWeights::new(random_spd(rng, n, 0.1), random_spd(rng, m, 0.1)).expect("weights are definite")
}

/// A random instance with a gain `K₀` satisfying `ρ(𝒜(K₀)) < max_radius`,
/// drawn by rejection; dimensions are sampled from `1..=n_max` etc.
pub fn random_stabilized_instance<R: Rng>(
    rng: &mut R,
    n_max: usize,
    m_max: usize,
    d_max: usize,
    max_radius: f64,
) -> (SystemModel, CostWeights, DMatrix<f64>) {
    loop {
        let n = rng.random_range(1..=n_max);
        let m = rng.random_range(1..=m_max);
        let d = rng.random_range(1..=d_max);
        let model = random_model(rng, n, m, d, 1.1, 0.4);
        let k0 = if rng.random_bool(0.5) {
            DMatrix::zeros(m, n)
        } else {
            uniform_matrix(rng, m, n, 0.3)
        };
        match is_ms_stabilizing(&model, &k0) {
            Ok(v) if v.radius < max_radius => {
                let weights = random_weights(rng, n, m);
                return (model, weights, k0);
            }
            _ => continue,
        }
    }
}
