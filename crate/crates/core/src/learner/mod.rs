//! Learning the optimal gain from rollouts when `Ā`, `B̄` are unknown.
//!
//! Each policy iteration collects closed-loop rollouts with exploration,
//! builds the regression system `Θθ = Γ` whose unknowns are the Lyapunov
//! stack of the current gain together with `M̂ ≈ B'P^dA + B̄'P⁰Ā` and
//! `N̂ ≈ B'P^dB + B̄'P⁰B̄`, solves it by least squares and sets
//! `K ← (R + N̂)⁻¹M̂`. Only `A`, `B` and `d` are read from the model.

mod dataset;
mod regression;

pub use dataset::{assemble_dataset, instrument_count, instrument_features, RowWeighting};
pub use regression::{
    build_regression_row, pack, policy_evaluation_ls, policy_update, unknown_count, unpack, LearningDataset,
    PolicyEvalResult, Unknowns, RANK_TOL,
};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix_kit::{max_abs, svec_len};
use crate::plant::{CostWeights, Exploration, KnownPart, NoiseDistribution, NoiseSpec, PlantHandle, Trajectory};
use crate::riccati::PolicySolution;
use crate::stability::StabilityVerdict;

/// Energy growth over the collection horizon above which the blind probe
/// rejects the initial gain.
pub const PROBE_GROWTH_LIMIT: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DataMode {
    /// New rollouts under `K_j` for every iteration.
    #[default]
    Fresh,
    /// One batch collected under `K₀`, reused by every iteration.
    SingleBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub k0: DMatrix<f64>,
    pub exploration_variance: f64,
    pub rollouts: usize,
    /// First time index whose row may enter the regression.
    pub k1: usize,
    /// Rollout length; rows use `k < k2`.
    pub k2: usize,
    pub tol: f64,
    pub max_policy_iters: usize,
    pub seed: u64,
    pub ridge: f64,
    pub data_mode: DataMode,
    pub row_weighting: RowWeighting,
}

impl LearnConfig {
    pub fn new(k0: DMatrix<f64>) -> Self {
        Self {
            k0,
            exploration_variance: 2.5,
            rollouts: 400,
            k1: 0,
            k2: 40,
            tol: 1e-4,
            max_policy_iters: 50,
            seed: 0,
            ridge: 0.0,
            data_mode: DataMode::Fresh,
            row_weighting: RowWeighting::Instrumented,
        }
    }

    fn check(&self, known: &KnownPart) -> Result<()> {
        if self.k0.shape() != (known.m(), known.n()) {
            return Err(Error::Dimension(format!(
                "K0 must be {}x{}, got {}x{}",
                known.m(),
                known.n(),
                self.k0.nrows(),
                self.k0.ncols()
            )));
        }
        if self.rollouts == 0 {
            return Err(Error::Input("rollouts must be at least 1".into()));
        }
        if !(self.exploration_variance >= 0.0) || !self.exploration_variance.is_finite() {
            return Err(Error::Input("exploration variance must be finite and nonnegative".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Input("tol must be positive".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::Input("ridge must be nonnegative".into()));
        }
        if self.k2 <= self.k1.max(known.delay) {
            return Err(Error::Input(format!(
                "data window [{}, {}] leaves no regression rows for d = {}",
                self.k1, self.k2, known.delay
            )));
        }
        Ok(())
    }

    fn rows(&self, delay: usize) -> std::ops::Range<usize> {
        self.k1.max(delay)..self.k2
    }
}

/// `(l₁, l₂)`: unknowns learned here and by a state-augmented formulation.
pub fn parameter_counts(n: usize, m: usize, d: usize) -> (usize, usize) {
    let aug = d * m + n;
    (unknown_count(n, m, d), svec_len(aug) + svec_len(m) + m * aug)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnIteration {
    /// `j + 1` for the gain `K_{j+1}` produced by this iteration.
    pub iteration: usize,
    pub gain: DMatrix<f64>,
    pub step: f64,
    pub residual_norm: f64,
    pub rank: usize,
    pub condition: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    /// `E|x_{k2}|² / E|x_{k0}|²` with `k0` the first time of nonzero energy.
    pub energy_ratio: f64,
    /// Exact verdict, when the plant handle provides one.
    pub exact: Option<StabilityVerdict>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnReport {
    /// `K₀, K₁, ..`.
    pub gains: Vec<DMatrix<f64>>,
    pub iterations: Vec<LearnIteration>,
    pub converged: bool,
    pub evaluation: PolicyEvalResult,
    pub probe: ProbeReport,
}

impl LearnReport {
    pub fn final_gain(&self) -> &DMatrix<f64> {
        self.gains.last().expect("at least K0")
    }

    /// The last evaluation packaged like an offline solution.
    pub fn solution_estimate(&self, weights: &CostWeights) -> PolicySolution {
        PolicySolution {
            stack: self.evaluation.stack.clone(),
            gain: self.final_gain().clone(),
            upsilon: weights.r.add(&self.evaluation.nhat),
            m: self.evaluation.mhat.clone(),
            iterations: self.iterations.len(),
            residual: self.evaluation.residual_norm,
            history: Vec::new(),
        }
    }
}

fn collect<P: PlantHandle + ?Sized>(
    plant: &P,
    gain: &DMatrix<f64>,
    config: &LearnConfig,
    batch: u64,
) -> Result<Vec<Trajectory>> {
    let exploration = Exploration::Random(NoiseSpec {
        distribution: NoiseDistribution::Gaussian,
        variance: config.exploration_variance,
        seed: config.seed,
    });
    let base = batch * config.rollouts as u64;
    (0..config.rollouts as u64)
        .into_par_iter()
        .map(|r| plant.rollout(gain, config.k2, &exploration, config.seed, base + r))
        .collect()
}

fn energy_ratio(batch: &[Trajectory]) -> f64 {
    let horizon = batch[0].states.len();
    let energy = |k: usize| batch.iter().map(|t| t.state(k).norm_squared()).sum::<f64>() / batch.len() as f64;
    match (0..horizon).map(energy).find(|e| *e > 0.0) {
        Some(first) => energy(horizon - 1) / first,
        None => 0.0,
    }
}

/// Runs learning policy iteration against `plant`.
pub fn learn<P: PlantHandle + ?Sized>(
    plant: &P,
    known: &KnownPart,
    weights: &CostWeights,
    config: &LearnConfig,
) -> Result<LearnReport> {
    config.check(known)?;
    let (n, m, d) = plant.dims();
    if (n, m, d) != (known.n(), known.m(), known.delay) {
        return Err(Error::Dimension("plant and known model disagree on (n, m, d)".into()));
    }
    if weights.q.dim() != n || weights.r.dim() != m {
        return Err(Error::Dimension("cost weights do not match the plant".into()));
    }

    let exact = match plant.stability_oracle(&config.k0) {
        Some(v) => {
            let v = v?;
            log::info!("exact stability test of K0: radius {:.6}", v.radius);
            if !v.stabilizing {
                return Err(Error::NotStabilizing { radius: v.radius });
            }
            Some(v)
        }
        None => None,
    };

    let rows = config.rows(d);
    let mut gain = config.k0.clone();
    let mut gains = vec![gain.clone()];
    let mut iterations = Vec::new();
    let mut batch = collect(plant, &gain, config, 0).map_err(|e| match e {
        Error::Divergence { seed, rollout, step } => Error::Input(format!(
            "initial gain failed the stability probe: rollout {rollout} (seed {seed}) diverged at step {step}"
        )),
        other => other,
    })?;
    let ratio = energy_ratio(&batch);
    log::info!("blind stability probe of K0 (heuristic): energy ratio {ratio:.3e}");
    if !(ratio < PROBE_GROWTH_LIMIT) {
        return Err(Error::Input(format!(
            "initial gain failed the stability probe: state energy grew by {ratio:.3e} over the window"
        )));
    }
    let probe = ProbeReport {
        energy_ratio: ratio,
        exact,
    };

    let mut converged = false;
    let mut evaluation = None;
    for j in 0..config.max_policy_iters {
        if j > 0 && config.data_mode == DataMode::Fresh {
            batch = collect(plant, &gain, config, j as u64)?;
        }
        let dataset = assemble_dataset(&batch, &gain, known, weights, rows.clone(), config.row_weighting)?;
        let eval = policy_evaluation_ls(&dataset, config.ridge)?;
        let next = policy_update(&eval, weights)?;
        let step = max_abs(&(&next - &gain));
        log::debug!(
            "learning iteration {}: step {step:.3e}, rank {}, condition {:.3e}",
            j + 1,
            eval.theta_rank,
            eval.condition
        );
        iterations.push(LearnIteration {
            iteration: j + 1,
            gain: next.clone(),
            step,
            residual_norm: eval.residual_norm,
            rank: eval.theta_rank,
            condition: eval.condition,
            rows: dataset.row_count(),
        });
        gains.push(next.clone());
        gain = next;
        evaluation = Some(eval);
        if step < config.tol {
            converged = true;
            break;
        }
    }
    let evaluation = evaluation.ok_or_else(|| Error::Input("max_policy_iters must be at least 1".into()))?;
    Ok(LearnReport {
        gains,
        iterations,
        converged,
        evaluation,
        probe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_counts() {
        assert_eq!(parameter_counts(2, 1, 2), (12, 15));
    }

    #[test]
    fn augmented_count_grows_faster() {
        let gap = |d| {
            let (a, b) = parameter_counts(1, 1, d);
            b - a
        };
        assert!(gap(20) - gap(10) > gap(10) - gap(0));
        // l₁ = 11 + 1 + 1, l₂ = 66 + 1 + 11
        assert_eq!(gap(10), 65);
    }
}
