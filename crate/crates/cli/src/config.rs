//! Experiment configuration: TOML with matrices as nested row-major arrays.

use std::path::PathBuf;

use delaylqr::learner::{DataMode, LearnConfig, RowWeighting};
use delaylqr::plant::{CostWeights, InitialData, NoiseDistribution, NoiseSpec, SystemModel};
use delaylqr::SymMatrix;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Rows of a matrix.
pub type Rows = Vec<Vec<f64>>;

pub const EXAMPLE_CONFIG: &str = include_str!("../configs/example.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Solve,
    Learn,
    Simulate,
    CheckStability,
    #[serde(alias = "paper-example")]
    Example,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Learn => "learn",
            Mode::Simulate => "simulate",
            Mode::CheckStability => "check-stability",
            Mode::Example => "example",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelSection,
    pub weights: WeightsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSection>,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub learn: LearnSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub stability: StabilitySection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "Abar")]
    pub a_bar: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "Bbar")]
    pub b_bar: Rows,
    pub delay: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub x0: Vec<f64>,
    /// `u_{-d}, .., u_{-1}`.
    pub u_hist: Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    #[default]
    Gaussian,
    Rademacher,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub distribution: Distribution,
    pub variance: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            distribution: Distribution::Gaussian,
            variance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<Rows>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            k0: None,
            tol: delaylqr::riccati::DEFAULT_TOL,
            max_iter: delaylqr::riccati::DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataModeName {
    #[default]
    Fresh,
    SingleBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingName {
    #[default]
    Instrumented,
    TimeAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<Rows>,
    pub exploration_variance: f64,
    pub rollouts: usize,
    pub k1: usize,
    pub k2: usize,
    pub tol: f64,
    pub max_policy_iters: usize,
    pub ridge: f64,
    pub data_mode: DataModeName,
    pub row_weighting: WeightingName,
}

impl Default for LearnSection {
    fn default() -> Self {
        let d = LearnConfig::new(DMatrix::zeros(0, 0));
        Self {
            k0: None,
            exploration_variance: d.exploration_variance,
            rollouts: d.rollouts,
            k1: d.k1,
            k2: d.k2,
            tol: d.tol,
            max_policy_iters: d.max_policy_iters,
            ridge: d.ridge,
            data_mode: DataModeName::Fresh,
            row_weighting: WeightingName::Instrumented,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Feedback gain; the optimal gain when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<Rows>,
    pub horizon: usize,
    pub rollouts: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            gain: None,
            horizon: 40,
            rollouts: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    /// Gain to test; zero when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<Rows>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string().trim_end().replace('\n', " | ")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<Experiment, CliError> {
        let a = matrix("model.A", &self.model.a)?;
        let n = a.nrows();
        if !a.is_square() {
            return Err(CliError::field(
                "model.A",
                format!("must be square, got {}x{} ({} entries)", a.nrows(), a.ncols(), a.len()),
            ));
        }
        let b = matrix("model.B", &self.model.b)?;
        let m = b.ncols();
        expect_shape("model.B", &b, n, m)?;
        let a_bar = matrix("model.Abar", &self.model.a_bar)?;
        expect_shape("model.Abar", &a_bar, n, n)?;
        let b_bar = matrix("model.Bbar", &self.model.b_bar)?;
        expect_shape("model.Bbar", &b_bar, n, m)?;
        let d = self.model.delay;
        if d == 0 {
            return Err(CliError::field("model.delay", "must be at least 1"));
        }
        let model = SystemModel::new(a, a_bar, b, b_bar, d).map_err(|e| CliError::field("model", e.to_string()))?;

        let q = matrix("weights.Q", &self.weights.q)?;
        expect_shape("weights.Q", &q, n, n)?;
        let r = matrix("weights.R", &self.weights.r)?;
        expect_shape("weights.R", &r, m, m)?;
        let q = SymMatrix::new(q).map_err(|e| CliError::field("weights.Q", e.to_string()))?;
        let r = SymMatrix::new(r).map_err(|e| CliError::field("weights.R", e.to_string()))?;
        let weights = CostWeights::new(q, r).map_err(|e| CliError::field("weights", e.to_string()))?;

        let init = match &self.initial {
            None => InitialData::zeros(n, m, d),
            Some(s) => {
                if s.x0.len() != n {
                    return Err(CliError::field("initial.x0", format!("has {} entries, expected {n}", s.x0.len())));
                }
                let u = matrix("initial.u_hist", &s.u_hist)?;
                expect_shape("initial.u_hist", &u, d, m)?;
                let init = InitialData {
                    x0: DVector::from_vec(s.x0.clone()),
                    u_hist: (0..d).map(|i| u.row(i).transpose()).collect(),
                };
                init.check(&model).map_err(|e| CliError::field("initial", e.to_string()))?;
                init
            }
        };

        let gain = |field: &str, rows: &Option<Rows>| -> Result<DMatrix<f64>, CliError> {
            match rows {
                None => Ok(DMatrix::zeros(m, n)),
                Some(rows) => {
                    let k = matrix(field, rows)?;
                    expect_shape(field, &k, m, n)?;
                    Ok(k)
                }
            }
        };
        let solve_k0 = gain("solve.k0", &self.solve.k0)?;
        let learn_k0 = gain("learn.k0", &self.learn.k0)?;
        let sim_gain = match &self.sim.gain {
            None => None,
            some => Some(gain("sim.gain", some)?),
        };
        let stability_gain = gain("stability.gain", &self.stability.gain)?;

        positive("solve.tol", self.solve.tol)?;
        positive("learn.tol", self.learn.tol)?;
        if !(self.noise.variance >= 0.0 && self.noise.variance.is_finite()) {
            return Err(CliError::field("noise.variance", "must be finite and nonnegative"));
        }
        if self.sim.rollouts == 0 {
            return Err(CliError::field("sim.rollouts", "must be at least 1"));
        }

        let learn = LearnConfig {
            k0: learn_k0,
            exploration_variance: self.learn.exploration_variance,
            rollouts: self.learn.rollouts,
            k1: self.learn.k1,
            k2: self.learn.k2,
            tol: self.learn.tol,
            max_policy_iters: self.learn.max_policy_iters,
            seed: self.seed,
            ridge: self.learn.ridge,
            data_mode: match self.learn.data_mode {
                DataModeName::Fresh => DataMode::Fresh,
                DataModeName::SingleBatch => DataMode::SingleBatch,
            },
            row_weighting: match self.learn.row_weighting {
                WeightingName::Instrumented => RowWeighting::Instrumented,
                WeightingName::TimeAverage => RowWeighting::TimeAverage,
            },
        };
        let noise = NoiseSpec {
            distribution: match self.noise.distribution {
                Distribution::Gaussian => NoiseDistribution::Gaussian,
                Distribution::Rademacher => NoiseDistribution::Rademacher,
                Distribution::Zero => NoiseDistribution::Zero,
            },
            variance: self.noise.variance,
            seed: self.seed,
        };
        Ok(Experiment {
            model,
            weights,
            init,
            noise,
            solve_k0,
            solve_tol: self.solve.tol,
            solve_max_iter: self.solve.max_iter,
            learn,
            sim_gain,
            sim_horizon: self.sim.horizon,
            sim_rollouts: self.sim.rollouts,
            stability_gain,
        })
    }
}

/// A validated configuration in solver types.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: SystemModel,
    pub weights: CostWeights,
    pub init: InitialData,
    pub noise: NoiseSpec,
    pub solve_k0: DMatrix<f64>,
    pub solve_tol: f64,
    pub solve_max_iter: usize,
    pub learn: LearnConfig,
    pub sim_gain: Option<DMatrix<f64>>,
    pub sim_horizon: usize,
    pub sim_rollouts: usize,
    pub stability_gain: DMatrix<f64>,
}

fn matrix(field: &str, rows: &Rows) -> Result<DMatrix<f64>, CliError> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(CliError::field(field, "matrix has no rows"));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(CliError::field(field, "matrix has an empty first row"));
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(CliError::field(
            field,
            format!("row {} has {} entries, expected {ncols}", i + 1, row.len()),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::field(field, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn expect_shape(field: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<(), CliError> {
    if m.shape() != (rows, cols) {
        return Err(CliError::field(
            field,
            format!("expected {rows}x{cols}, got {}x{} ({} entries)", m.nrows(), m.ncols(), m.len()),
        ));
    }
    Ok(())
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(CliError::field(field, "must be positive"));
    }
    Ok(())
}

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}
