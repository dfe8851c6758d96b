//! The multiplicative-noise input-delay plant.

mod model;
mod moments;
mod noise;
mod sim;

pub use model::{
    example_system, validate_model, CostWeights, InitialData, KnownPart, SystemModel, ValidationReport, Q_PSD_SLACK,
    R_PD_MARGIN,
};
pub use moments::{open_loop_moments, propagate_second_moments, step_second_moments};
pub use noise::{stream_rng, NoiseDistribution, NoiseSpec, StreamKind};
pub use sim::{
    estimate_cost, predict, simulate, trajectory_cost, CostEstimate, Controller, Exploration, Trajectory,
    DIVERGENCE_LIMIT,
};

pub(crate) use sim::propagate;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::stability::{is_ms_stabilizing, StabilityVerdict};

/// Source of closed-loop rollouts whose noise matrices stay hidden from the caller.
pub trait PlantHandle: Sync {
    /// State and input dimensions and the delay.
    fn dims(&self) -> (usize, usize, usize);

    fn initial_data(&self) -> &InitialData;

    /// One rollout of `horizon` steps under predictor feedback with additive
    /// exploration, drawn from the streams of `(seed, rollout)`.
    fn rollout(
        &self,
        gain: &DMatrix<f64>,
        horizon: usize,
        exploration: &Exploration,
        seed: u64,
        rollout: u64,
    ) -> Result<Trajectory>;

    /// Exact mean-square stability verdict, when the harness knows the full model.
    fn stability_oracle(&self, _gain: &DMatrix<f64>) -> Option<Result<StabilityVerdict>> {
        None
    }
}

/// Simulator-backed [`PlantHandle`].
#[derive(Debug, Clone)]
pub struct SimulatedPlant {
    model: SystemModel,
    init: InitialData,
    noise: NoiseSpec,
}

impl SimulatedPlant {
    pub fn new(model: SystemModel, init: InitialData, noise: NoiseSpec) -> Result<Self> {
        model.check()?;
        init.check(&model)?;
        Ok(Self { model, init, noise })
    }

    /// Full model access for harness code that runs the exact stability test.
    pub fn model(&self) -> &SystemModel {
        &self.model
    }
}

impl PlantHandle for SimulatedPlant {
    fn dims(&self) -> (usize, usize, usize) {
        (self.model.n(), self.model.m(), self.model.delay)
    }

    fn initial_data(&self) -> &InitialData {
        &self.init
    }

    fn rollout(
        &self,
        gain: &DMatrix<f64>,
        horizon: usize,
        exploration: &Exploration,
        seed: u64,
        rollout: u64,
    ) -> Result<Trajectory> {
        simulate(
            &self.model,
            &self.init,
            &Controller::Gain(gain.clone()),
            horizon,
            &NoiseSpec { seed, ..self.noise },
            exploration,
            rollout,
        )
    }

    fn stability_oracle(&self, gain: &DMatrix<f64>) -> Option<Result<StabilityVerdict>> {
        Some(is_ms_stabilizing(&self.model, gain))
    }
}
