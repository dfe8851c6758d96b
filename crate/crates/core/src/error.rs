use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Shapes or lengths that do not agree with the model dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The gain handed to a routine that requires mean-square stability is not stabilizing.
    #[error("gain is not mean-square stabilizing (spectral radius {radius:.6})")]
    NotStabilizing { radius: f64 },

    /// The coupled Lyapunov system is singular or too ill-conditioned to trust.
    #[error("Lyapunov system singular or ill-conditioned (condition estimate {condition:.3e}); gain not stabilizing or problem degenerate")]
    Degenerate { condition: f64 },

    #[error("degenerate policy: {0}")]
    DegeneratePolicy(String),

    #[error("no convergence after {iterations} iterations (last step {last_step:.3e})")]
    NonConvergence {
        iterations: usize,
        last_step: f64,
        last_gain: DMatrix<f64>,
    },

    #[error("trajectory diverged at step {step} (rollout {rollout}, seed {seed})")]
    Divergence { seed: u64, rollout: u64, step: usize },

    #[error("insufficient excitation: rank {rank} < {required}: {detail}")]
    InsufficientExcitation {
        rank: usize,
        required: usize,
        detail: String,
    },
}

impl Error {
    /// Stable short tag for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Input(_) => "input",
            Error::NonFinite(_) => "non_finite",
            Error::Numerical(_) => "numerical",
            Error::NotStabilizing { .. } => "not_stabilizing",
            Error::Degenerate { .. } => "degenerate",
            Error::DegeneratePolicy(_) => "degenerate_policy",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Divergence { .. } => "divergence",
            Error::InsufficientExcitation { .. } => "insufficient_excitation",
        }
    }

    /// True for errors caused by malformed inputs rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_) | Error::Input(_) | Error::NonFinite(_)
        )
    }
}
