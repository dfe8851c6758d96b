//! Optimal control of discrete-time linear systems with input delay and
//! multiplicative noise.
//!
//! * [`stability`] decides mean-square stability of predictor feedback and
//!   solves the coupled Lyapunov equations that evaluate a gain.
//! * [`riccati`] runs model-based policy iteration to the optimal gain.
//! * [`learner`] reaches the same gain from simulated data while the noise
//!   matrices `Ā`, `B̄` stay hidden.

pub mod error;
pub mod learner;
pub mod matrix_kit;
pub mod plant;
pub mod riccati;
pub mod sampling;
pub mod stability;

pub use error::{Error, Result};
pub use matrix_kit::SymMatrix;
pub use plant::{CostWeights, InitialData, KnownPart, SystemModel};
pub use riccati::{solve_optimal, PolicySolution};
pub use stability::{is_ms_stabilizing, LyapunovStack};
