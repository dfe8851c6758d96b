use std::path::PathBuf;
use std::time::Instant;

use delaylqr::learner::{learn, parameter_counts, LearnReport};
use delaylqr::matrix_kit::max_abs;
use delaylqr::plant::{estimate_cost, simulate, Controller, Exploration, SimulatedPlant};
use delaylqr::riccati::{expected_cost, solve_optimal, PolicySolution};
use delaylqr::stability::is_ms_stabilizing;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{to_rows, DataModeName, Experiment, ExperimentConfig, Mode};
use crate::error::CliError;
use crate::report::{GainRow, Writer};

/// Command-line values that replace configuration entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub rollouts: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub horizon: Option<usize>,
    pub exploration_variance: Option<f64>,
    pub single_batch: bool,
}

impl Overrides {
    pub fn apply(&self, mode: Mode, cfg: &mut ExperimentConfig) {
        cfg.mode = Some(mode);
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(r) = self.rollouts {
            cfg.learn.rollouts = r;
            cfg.sim.rollouts = r;
        }
        if let Some(h) = self.horizon {
            cfg.sim.horizon = h;
        }
        if let Some(v) = self.exploration_variance {
            cfg.learn.exploration_variance = v;
        }
        if self.single_batch {
            cfg.learn.data_mode = DataModeName::SingleBatch;
        }
        match mode {
            Mode::Solve | Mode::Simulate => {
                if let Some(t) = self.tol {
                    cfg.solve.tol = t;
                }
                if let Some(i) = self.max_iter {
                    cfg.solve.max_iter = i;
                }
            }
            Mode::Learn | Mode::Example => {
                if let Some(t) = self.tol {
                    cfg.learn.tol = t;
                }
                if let Some(i) = self.max_iter {
                    cfg.learn.max_policy_iters = i;
                }
            }
            Mode::CheckStability => {}
        }
    }
}

/// Runs `cfg` in `mode` and writes the artifacts; returns the summary.
pub fn run(mode: Mode, cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let exp = cfg.resolve()?;
    let mut out = Writer::create(&cfg.output_dir)?;
    let mut timings = Map::new();
    let mut metrics = Map::new();
    match mode {
        Mode::Solve => {
            let sol = timed(&mut timings, "solve", || solve(&exp))?;
            solve_metrics(&exp, &sol, &mut metrics)?;
            out.gains(&solve_rows(&sol))?;
            out.stacks(&[("solve", &sol.stack)])?;
            out.stability(&sol.gain, &is_ms_stabilizing(&exp.model, &sol.gain)?)?;
        }
        Mode::Learn => {
            let report = timed(&mut timings, "learn", || run_learn(&exp))?;
            learn_metrics(&exp, &report, None, &mut metrics);
            out.gains(&learn_rows(&report))?;
            out.stacks(&[("learn", &report.evaluation.stack)])?;
        }
        Mode::Simulate => {
            let gain = match &exp.sim_gain {
                Some(k) => k.clone(),
                None => timed(&mut timings, "solve", || solve(&exp))?.gain,
            };
            let trajs = timed(&mut timings, "simulate", || {
                (0..exp.sim_rollouts as u64)
                    .into_par_iter()
                    .map(|r| {
                        simulate(
                            &exp.model,
                            &exp.init,
                            &Controller::Gain(gain.clone()),
                            exp.sim_horizon,
                            &exp.noise,
                            &Exploration::None,
                            r,
                        )
                    })
                    .collect::<delaylqr::Result<Vec<_>>>()
            })?;
            let cost = estimate_cost(
                &exp.model,
                &exp.weights,
                &exp.init,
                &gain,
                exp.sim_horizon,
                exp.sim_rollouts,
                &exp.noise,
            )?;
            metrics.insert("gain".into(), json!(to_rows(&gain)));
            metrics.insert("cost_mean".into(), json!(cost.mean));
            metrics.insert("cost_std_error".into(), json!(cost.std_error));
            out.trajectories(&trajs)?;
            out.stability(&gain, &is_ms_stabilizing(&exp.model, &gain)?)?;
        }
        Mode::CheckStability => {
            let v = is_ms_stabilizing(&exp.model, &exp.stability_gain)?;
            metrics.insert("spectral_radius".into(), json!(v.radius));
            metrics.insert("stabilizing".into(), json!(v.stabilizing));
            out.stability(&exp.stability_gain, &v)?;
        }
        Mode::Example => {
            let v = is_ms_stabilizing(&exp.model, &exp.learn.k0)?;
            let sol = timed(&mut timings, "solve", || solve(&exp))?;
            let report = timed(&mut timings, "learn", || run_learn(&exp))?;
            solve_metrics(&exp, &sol, &mut metrics)?;
            learn_metrics(&exp, &report, Some(&sol.gain), &mut metrics);
            let mut rows = solve_rows(&sol);
            rows.extend(learn_rows(&report));
            out.gains(&rows)?;
            out.stacks(&[("solve", &sol.stack), ("learn", &report.evaluation.stack)])?;
            out.stability(&exp.learn.k0, &v)?;
        }
    }
    let mut files = out.written().to_vec();
    files.push("summary.json".into());
    let summary = json!({
        "mode": mode.name(),
        "seed": cfg.seed,
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "timings_ms": timings,
        "metrics": metrics,
        "files": files,
    });
    out.summary(&summary)?;
    Ok(summary)
}

fn timed<T>(timings: &mut Map<String, Value>, what: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    let ms = start.elapsed().as_secs_f64() * 1e3;
    log::info!("{what} took {ms:.1} ms");
    timings.insert(what.to_string(), json!(ms));
    out
}

fn solve(exp: &Experiment) -> Result<PolicySolution, CliError> {
    Ok(solve_optimal(&exp.model, &exp.weights, &exp.solve_k0, exp.solve_tol, exp.solve_max_iter)?)
}

fn run_learn(exp: &Experiment) -> Result<LearnReport, CliError> {
    let plant = SimulatedPlant::new(exp.model.clone(), exp.init.clone(), exp.noise)?;
    Ok(learn(&plant, &exp.model.known_part(), &exp.weights, &exp.learn)?)
}

fn solve_rows(sol: &PolicySolution) -> Vec<GainRow> {
    let last = sol.history.len() - 1;
    sol.history
        .iter()
        .enumerate()
        .map(|(i, h)| GainRow {
            source: "solve",
            iteration: h.iteration,
            gain: h.gain.clone(),
            step: Some(h.step),
            residual: (i == last).then_some(sol.residual),
            rank: None,
            condition: None,
            radius: Some(h.radius),
        })
        .collect()
}

fn learn_rows(report: &LearnReport) -> Vec<GainRow> {
    let mut rows = vec![GainRow {
        source: "learn",
        iteration: 0,
        gain: report.gains[0].clone(),
        step: Some(0.0),
        residual: None,
        rank: None,
        condition: None,
        radius: report.probe.exact.as_ref().map(|v| v.radius),
    }];
    rows.extend(report.iterations.iter().map(|it| GainRow {
        source: "learn",
        iteration: it.iteration,
        gain: it.gain.clone(),
        step: Some(it.step),
        residual: Some(it.residual_norm),
        rank: Some(it.rank),
        condition: Some(it.condition),
        radius: None,
    }));
    rows
}

fn solve_metrics(exp: &Experiment, sol: &PolicySolution, metrics: &mut Map<String, Value>) -> Result<(), CliError> {
    metrics.insert("optimal_gain".into(), json!(to_rows(&sol.gain)));
    metrics.insert("solve_iterations".into(), json!(sol.iterations));
    metrics.insert("riccati_residual".into(), json!(sol.residual));
    metrics.insert(
        "expected_cost".into(),
        json!(expected_cost(&exp.model, &exp.weights, &sol.stack, &exp.init)?),
    );
    Ok(())
}

fn learn_metrics(exp: &Experiment, report: &LearnReport, reference: Option<&DMatrix<f64>>, metrics: &mut Map<String, Value>) {
    let (n, m, d) = (exp.model.n(), exp.model.m(), exp.model.delay);
    let (l1, l2) = parameter_counts(n, m, d);
    metrics.insert("learned_gain".into(), json!(to_rows(report.final_gain())));
    metrics.insert("learn_iterations".into(), json!(report.iterations.len()));
    metrics.insert("learn_converged".into(), json!(report.converged));
    metrics.insert("probe_energy_ratio".into(), json!(report.probe.energy_ratio));
    metrics.insert("unknowns".into(), json!(l1));
    metrics.insert("augmented_unknowns".into(), json!(l2));
    if let Some(k) = reference {
        metrics.insert("learned_gain_error".into(), json!(max_abs(&(report.final_gain() - k))));
    }
}
