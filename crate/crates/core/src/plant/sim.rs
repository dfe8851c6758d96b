use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::model::{CostWeights, InitialData, KnownPart, SystemModel};
use super::noise::{stream_rng, NoiseSpec, StreamKind};
use crate::error::{Error, Result};

/// States beyond this magnitude are reported as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// How `u_0, u_1, ..` are chosen. The history `u_{-d}..u_{-1}` always comes from
/// [`InitialData`].
#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    /// Predictor feedback `u_{k-d} = -K x_{k|k-d-1}`.
    Gain(DMatrix<f64>),
    /// Fixed inputs `u_0, u_1, ..`; missing entries are zero.
    OpenLoop(Vec<DVector<f64>>),
}

/// Additive perturbation `e_t` on top of the controller output `u_t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Exploration {
    #[default]
    None,
    /// `e_0, e_1, ..`; missing entries are zero.
    Sequence(Vec<DVector<f64>>),
    /// i.i.d. zero-mean draws from the rollout's exploration stream.
    Random(NoiseSpec),
}

/// One realized rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0 .. x_N`.
    pub states: Vec<DVector<f64>>,
    /// `u_{-d} .. u_{N-1-d}` (at least the `d` history inputs).
    pub inputs: Vec<DVector<f64>>,
    /// `w_0 .. w_{N-1}`.
    pub noises: Vec<f64>,
    pub delay: usize,
    pub seed: u64,
    pub rollout: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.noises.len()
    }

    /// `u_t` for `t >= -d`.
    pub fn input(&self, t: isize) -> &DVector<f64> {
        &self.inputs[input_slot(t, self.delay)]
    }

    pub fn state(&self, k: usize) -> &DVector<f64> {
        &self.states[k]
    }
}

fn input_slot(t: isize, delay: usize) -> usize {
    let slot = t + delay as isize;
    assert!(slot >= 0, "input u_{t} precedes the history window");
    slot as usize
}

/// Deterministic propagation of `x` through `inputs` with `(A, B)` only.
pub(crate) fn propagate(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x: &DVector<f64>,
    inputs: &[&DVector<f64>],
) -> DVector<f64> {
    inputs.iter().fold(x.clone(), |acc, u| a * acc + b * *u)
}

/// Conditional mean of `x_k` given the information available when `x_{k-i}`
/// is observed: `A^i x_{k-i} + Σ_t A^{i-1-t} B u_{k-i-d+t}`.
///
/// `pending` holds `u_{k-i-d} .. u_{k-1-d}` and must have exactly `i` entries,
/// `1 <= i <= d + 1`.
pub fn predict(
    known: &KnownPart,
    x: &DVector<f64>,
    pending: &[DVector<f64>],
    i: usize,
) -> Result<DVector<f64>> {
    if i == 0 || i > known.delay + 1 {
        return Err(Error::Input(format!(
            "prediction horizon must be in 1..={}, got {i}",
            known.delay + 1
        )));
    }
    if pending.len() != i {
        return Err(Error::Input(format!(
            "prediction over {i} steps needs {i} pending inputs, got {}",
            pending.len()
        )));
    }
    if x.len() != known.n() || pending.iter().any(|u| u.len() != known.m()) {
        return Err(Error::Dimension("prediction data does not match (A, B)".into()));
    }
    let refs: Vec<&DVector<f64>> = pending.iter().collect();
    Ok(propagate(&known.a, &known.b, x, &refs))
}

fn diverged(x: &DVector<f64>) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

/// Runs one rollout of the plant.
///
/// For `k >= d` with a gain controller, `u_{k-d} = -K x_{k|k-d-1} + e_{k-d}`
/// where the prediction uses `x_{k-d}` and the inputs `u_{k-2d} .. u_{k-d-1}`.
/// The plant noise and the exploration noise come from two independent
/// streams derived from `(noise.seed, rollout)`.
pub fn simulate(
    model: &SystemModel,
    init: &InitialData,
    controller: &Controller,
    horizon: usize,
    noise: &NoiseSpec,
    exploration: &Exploration,
    rollout: u64,
) -> Result<Trajectory> {
    model.check()?;
    init.check(model)?;
    if horizon == 0 {
        return Err(Error::Input("horizon must be at least 1".into()));
    }
    if let Controller::Gain(k) = controller {
        model.check_gain(k)?;
    }
    let d = model.delay;
    let m = model.m();
    let mut plant_rng = stream_rng(noise.seed, rollout, StreamKind::Plant);
    let mut explore_rng = stream_rng(noise.seed, rollout, StreamKind::Exploration);

    let mut states = Vec::with_capacity(horizon + 1);
    states.push(init.x0.clone());
    let mut inputs: Vec<DVector<f64>> = init.u_hist.clone();
    let mut noises = Vec::with_capacity(horizon);

    for k in 0..horizon {
        if k >= d {
            let t = k - d;
            let base = match controller {
                Controller::Gain(gain) => {
                    let pending: Vec<&DVector<f64>> =
                        (0..d).map(|s| &inputs[input_slot(t as isize - d as isize + s as isize, d)]).collect();
                    let xhat = propagate(&model.a, &model.b, &states[t], &pending);
                    -(gain * xhat)
                }
                Controller::OpenLoop(seq) => seq.get(t).cloned().unwrap_or_else(|| DVector::zeros(m)),
            };
            let e = match exploration {
                Exploration::None => DVector::zeros(m),
                Exploration::Sequence(seq) => seq.get(t).cloned().unwrap_or_else(|| DVector::zeros(m)),
                Exploration::Random(spec) => DVector::from_fn(m, |_, _| spec.sample(&mut explore_rng)),
            };
            if e.len() != m || base.len() != m {
                return Err(Error::Dimension(format!("input u_{t} must have length {m}")));
            }
            inputs.push(base + e);
        }
        let w = noise.sample(&mut plant_rng);
        let x = &states[k];
        let u = &inputs[input_slot(k as isize - d as isize, d)];
        let next = (&model.a + &model.a_bar * w) * x + (&model.b + &model.b_bar * w) * u;
        if diverged(&next) {
            return Err(Error::Divergence {
                seed: noise.seed,
                rollout,
                step: k + 1,
            });
        }
        noises.push(w);
        states.push(next);
    }

    Ok(Trajectory {
        states,
        inputs,
        noises,
        delay: d,
        seed: noise.seed,
        rollout,
    })
}

/// `Σ_{k<N} x_k'Q x_k + u_{k-d}'R u_{k-d}` along one trajectory.
pub fn trajectory_cost(traj: &Trajectory, weights: &CostWeights) -> f64 {
    (0..traj.horizon())
        .map(|k| {
            weights.q.quad_form(traj.state(k))
                + weights.r.quad_form(traj.input(k as isize - traj.delay as isize))
        })
        .sum()
}

/// Monte-Carlo estimate of the truncated cost with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub rollouts: usize,
}

pub fn estimate_cost(
    model: &SystemModel,
    weights: &CostWeights,
    init: &InitialData,
    gain: &DMatrix<f64>,
    horizon: usize,
    rollouts: usize,
    noise: &NoiseSpec,
) -> Result<CostEstimate> {
    if rollouts == 0 {
        return Err(Error::Input("need at least one rollout".into()));
    }
    let controller = Controller::Gain(gain.clone());
    let costs: Vec<f64> = (0..rollouts as u64)
        .into_par_iter()
        .map(|r| {
            simulate(model, init, &controller, horizon, noise, &Exploration::None, r)
                .map(|t| trajectory_cost(&t, weights))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&costs))
}

pub(crate) fn summarize(samples: &[f64]) -> CostEstimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    CostEstimate {
        mean,
        std_error: (var / n).sqrt(),
        rollouts: samples.len(),
    }
}
