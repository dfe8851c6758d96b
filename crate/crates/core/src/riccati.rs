//! Model-based policy iteration for the delayed multiplicative-noise Riccati
//! equations, the conversion to the incremental ("bold") form, and value
//! function evaluation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix_kit::{max_abs, SymMatrix};
use crate::plant::{open_loop_moments, CostWeights, InitialData, SystemModel};
use crate::stability::{is_ms_stabilizing, lyapunov_residual, policy_qstack, solve_lyapunov_stack, LyapunovStack};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Slack for the per-iteration monotonicity and PSD checks.
pub const MONOTONE_SLACK: f64 = 1e-8;
/// `Υ` must have its smallest eigenvalue above this.
pub const UPSILON_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// `j` for the gain `K_j` (the initial gain is iteration 0).
    pub iteration: usize,
    pub gain: DMatrix<f64>,
    /// `‖K_j - K_{j-1}‖∞`; zero for the initial gain.
    pub step: f64,
    pub radius: f64,
    /// Smallest eigenvalue over the stack evaluated at `K_j`.
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySolution {
    pub stack: LyapunovStack,
    pub gain: DMatrix<f64>,
    /// `R + B'P^dB + B̄'P⁰B̄`.
    pub upsilon: SymMatrix,
    /// `B'P^dA + B̄'P⁰Ā`.
    pub m: DMatrix<f64>,
    pub iterations: usize,
    /// Fixed-point residual, see [`riccati_residual`].
    pub residual: f64,
    pub history: Vec<IterationRecord>,
}

/// `(Υ, M)` for a stack.
pub fn improvement_terms(model: &SystemModel, weights: &CostWeights, stack: &LyapunovStack) -> (SymMatrix, DMatrix<f64>) {
    let pd = stack.last().as_matrix();
    let p0 = stack.first().as_matrix();
    let upsilon = weights
        .r
        .add(&SymMatrix::symmetrize(&(model.b.transpose() * pd * &model.b)))
        .add(&SymMatrix::symmetrize(&(model.b_bar.transpose() * p0 * &model.b_bar)));
    let m = model.b.transpose() * pd * &model.a + model.b_bar.transpose() * p0 * &model.a_bar;
    (upsilon, m)
}

/// `Υ⁻¹ M`, requiring `Υ ≻ 0`.
pub fn solve_gain(upsilon: &SymMatrix, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let min = upsilon.min_eigenvalue();
    if !(min > UPSILON_MARGIN) {
        return Err(Error::DegeneratePolicy(format!(
            "R + B'P^dB + B̄'P⁰B̄ not positive definite (min eigenvalue {min:.3e})"
        )));
    }
    let chol = upsilon
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegeneratePolicy("Cholesky factorization failed".into()))?;
    Ok(chol.solve(m))
}

pub fn policy_improvement(model: &SystemModel, weights: &CostWeights, stack: &LyapunovStack) -> Result<DMatrix<f64>> {
    let (upsilon, m) = improvement_terms(model, weights, stack);
    solve_gain(&upsilon, &m)
}

/// Residual of the fixed point: the policy-evaluation equations at `K`, the
/// gain equation `K = Υ⁻¹M`, and the Riccati form
/// `P^d = A'P^dA + Ā'P⁰Ā + Q - M'Υ⁻¹M`.
pub fn riccati_residual(
    model: &SystemModel,
    weights: &CostWeights,
    stack: &LyapunovStack,
    gain: &DMatrix<f64>,
) -> Result<f64> {
    let qs = policy_qstack(weights, gain, model.delay);
    let eval = lyapunov_residual(model, gain, &qs, stack);
    let (upsilon, m) = improvement_terms(model, weights, stack);
    let optimal = solve_gain(&upsilon, &m)?;
    let gain_res = max_abs(&(gain - &optimal));
    let pd = stack.last().as_matrix();
    let p0 = stack.first().as_matrix();
    let riccati = model.a.transpose() * pd * &model.a + model.a_bar.transpose() * p0 * &model.a_bar
        + weights.q.as_matrix()
        - m.transpose() * &optimal;
    let ric_res = max_abs(&(pd - riccati));
    Ok(eval.max(gain_res).max(ric_res))
}

/// Policy iteration from a mean-square stabilizing `k0` until `‖K_{j+1} - K_j‖∞ < tol`.
///
/// Every iterate is checked for stability, and the evaluated stacks for
/// positive semi-definiteness and monotone decrease; violations are reported as
/// numerical failures since they cannot occur with a correctly assembled system.
pub fn solve_optimal(
    model: &SystemModel,
    weights: &CostWeights,
    k0: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<PolicySolution> {
    model.check()?;
    model.check_gain(k0)?;
    if !(tol > 0.0) {
        return Err(Error::Input(format!("tolerance must be positive, got {tol}")));
    }
    let d = model.delay;
    let verdict = is_ms_stabilizing(model, k0)?;
    if !verdict.stabilizing {
        return Err(Error::NotStabilizing { radius: verdict.radius });
    }

    let mut gain = k0.clone();
    let mut stack = solve_lyapunov_stack(model, &gain, &policy_qstack(weights, &gain, d))?;
    let mut history = vec![IterationRecord {
        iteration: 0,
        gain: gain.clone(),
        step: 0.0,
        radius: verdict.radius,
        min_eigenvalue: stack.min_eigenvalue(),
    }];
    check_psd(&stack, 0)?;

    for j in 1..=max_iter {
        let next = policy_improvement(model, weights, &stack)?;
        let step = max_abs(&(&next - &gain));
        let verdict = is_ms_stabilizing(model, &next)?;
        if !verdict.stabilizing {
            return Err(Error::Numerical(format!(
                "iterate {j} is not stabilizing (radius {:.6})",
                verdict.radius
            )));
        }
        let next_stack = solve_lyapunov_stack(model, &next, &policy_qstack(weights, &next, d))?;
        check_psd(&next_stack, j)?;
        for (i, (old, new)) in stack.p.iter().zip(&next_stack.p).enumerate() {
            let dec = old.sub(new).min_eigenvalue();
            if dec < -MONOTONE_SLACK {
                return Err(Error::Numerical(format!(
                    "P^{i} increased at iteration {j} (min eigenvalue of decrement {dec:.3e})"
                )));
            }
        }
        history.push(IterationRecord {
            iteration: j,
            gain: next.clone(),
            step,
            radius: verdict.radius,
            min_eigenvalue: next_stack.min_eigenvalue(),
        });
        log::debug!("policy iteration {j}: step {step:.3e}, radius {:.6}", verdict.radius);
        gain = next;
        stack = next_stack;
        if step < tol {
            let (upsilon, m) = improvement_terms(model, weights, &stack);
            let residual = riccati_residual(model, weights, &stack, &gain)?;
            return Ok(PolicySolution {
                stack,
                gain,
                upsilon,
                m,
                iterations: j,
                residual,
                history,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        last_step: history.last().map_or(f64::NAN, |h| h.step),
        last_gain: gain,
    })
}

fn check_psd(stack: &LyapunovStack, j: usize) -> Result<()> {
    let min = stack.min_eigenvalue();
    if min < -MONOTONE_SLACK {
        return Err(Error::Numerical(format!(
            "stack at iteration {j} is indefinite (min eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

/// `x̂'P^d x̂ + Σ_{i=1}^d δ_i' P^{i-1} δ_i` where `x̂ = x_{k|k-d-1}` and
/// `δ_i = x_{k|k-i} - x_{k|k-i-1}`.
pub fn value_from_decomposition(stack: &LyapunovStack, xhat: &DVector<f64>, deltas: &[DVector<f64>]) -> Result<f64> {
    let d = stack.delay();
    if deltas.len() != d {
        return Err(Error::Input(format!("need {d} innovation terms, got {}", deltas.len())));
    }
    let n = stack.dim();
    if xhat.len() != n || deltas.iter().any(|v| v.len() != n) {
        return Err(Error::Dimension(format!("decomposition vectors must have length {n}")));
    }
    Ok(stack.last().quad_form(xhat)
        + deltas
            .iter()
            .enumerate()
            .map(|(i, delta)| stack.p[i].quad_form(delta))
            .sum::<f64>())
}

/// Expected cost-to-go from `k = d` for deterministic initial data, in closed form.
///
/// `x_{d|d-i} - x_{d|d-i-1} = A^{i-1} w_{d-i} (Ā x_{d-i} + B̄ u_{-i})`, so the
/// innovation terms only need the open-loop moments of `x_0 .. x_{d-1}`.
pub fn value_at_delay(model: &SystemModel, stack: &LyapunovStack, init: &InitialData) -> Result<f64> {
    let d = model.delay;
    if stack.delay() != d || stack.dim() != model.n() {
        return Err(Error::Dimension("stack does not match the model".into()));
    }
    let moments = open_loop_moments(model, init)?;
    let xhat = &moments[d].0;
    let mut value = stack.last().quad_form(xhat);
    let (ab, bb) = (&model.a_bar, &model.b_bar);
    let mut apow = DMatrix::identity(model.n(), model.n());
    for i in 1..=d {
        let (mean, second) = &moments[d - i];
        let u = &init.u_hist[d - i];
        let mu = mean * u.transpose();
        let cov = ab * second * ab.transpose()
            + ab * &mu * bb.transpose()
            + bb * mu.transpose() * ab.transpose()
            + bb * u * u.transpose() * bb.transpose();
        value += (apow.transpose() * stack.p[i - 1].as_matrix() * &apow * cov).trace();
        apow = &model.a * apow;
    }
    Ok(value)
}

/// `E Σ_{k≥0} x_k'Qx_k + u_{k-d}'Ru_{k-d}` for deterministic initial data under
/// the gain the stack was evaluated for.
pub fn expected_cost(model: &SystemModel, weights: &CostWeights, stack: &LyapunovStack, init: &InitialData) -> Result<f64> {
    let moments = open_loop_moments(model, init)?;
    let head: f64 = (0..model.delay)
        .map(|t| (weights.q.as_matrix() * &moments[t].1).trace() + weights.r.quad_form(&init.u_hist[t]))
        .sum();
    Ok(head + value_at_delay(model, stack, init)?)
}

/// Incremental form `𝐏¹, .., 𝐏^{d+1}` with `𝐏¹ = P⁰` and `𝐏^{d+2-i} = P^i - P^{i-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LegacyRiccatiStack {
    /// `pbold[j - 1]` holds `𝐏^j`.
    pub pbold: Vec<SymMatrix>,
}

impl LegacyRiccatiStack {
    pub fn delay(&self) -> usize {
        self.pbold.len() - 1
    }

    /// `𝐏^j`, `1 <= j <= d + 1`.
    pub fn get(&self, j: usize) -> &SymMatrix {
        &self.pbold[j - 1]
    }

    pub fn total(&self) -> SymMatrix {
        self.pbold[1..].iter().fold(self.pbold[0].clone(), |acc, p| acc.add(p))
    }
}

pub fn convert_legacy(stack: &LyapunovStack) -> LegacyRiccatiStack {
    let d = stack.delay();
    let mut pbold = vec![SymMatrix::zeros(stack.dim()); d + 1];
    pbold[0] = stack.p[0].clone();
    for i in 1..=d {
        pbold[d + 1 - i] = stack.p[i].sub(&stack.p[i - 1]);
    }
    LegacyRiccatiStack { pbold }
}

pub fn convert_from_legacy(legacy: &LegacyRiccatiStack) -> LyapunovStack {
    let d = legacy.delay();
    let mut p = Vec::with_capacity(d + 1);
    p.push(legacy.get(1).clone());
    for i in 1..=d {
        let next = p[i - 1].add(legacy.get(d + 2 - i));
        p.push(next);
    }
    LyapunovStack { p }
}

/// Largest residual of the incremental-form optimality system:
/// `𝐏¹ = A'(𝐏¹ + 𝐏^{d+1})A + Ā'𝐏¹Ā + Q`, `𝐏² = -M'Υ⁻¹M` and
/// `𝐏^j = A'𝐏^{j-1}A` (`j = 3..d+1`), with
/// `Υ = R + Σ B'𝐏^iB + B̄'𝐏¹B̄`, `M = Σ B'𝐏^iA + B̄'𝐏¹Ā`.
pub fn legacy_residual(model: &SystemModel, weights: &CostWeights, legacy: &LegacyRiccatiStack) -> Result<f64> {
    let d = model.delay;
    if legacy.delay() != d || legacy.get(1).dim() != model.n() {
        return Err(Error::Dimension("incremental stack does not match the model".into()));
    }
    let (a, ab, b, bb) = (&model.a, &model.a_bar, &model.b, &model.b_bar);
    let total = legacy.total();
    let p1 = legacy.get(1).as_matrix();
    let upsilon = weights
        .r
        .add(&SymMatrix::symmetrize(&(b.transpose() * total.as_matrix() * b)))
        .add(&SymMatrix::symmetrize(&(bb.transpose() * p1 * bb)));
    let m = b.transpose() * total.as_matrix() * a + bb.transpose() * p1 * ab;
    let gain = solve_gain(&upsilon, &m)?;

    let first = a.transpose() * (p1 + legacy.get(d + 1).as_matrix()) * a + ab.transpose() * p1 * ab + weights.q.as_matrix();
    let mut residual = max_abs(&(p1 - first));
    residual = residual.max(max_abs(&(legacy.get(2).as_matrix() + m.transpose() * &gain)));
    for j in 3..=d + 1 {
        let rhs = a.transpose() * legacy.get(j - 1).as_matrix() * a;
        residual = residual.max(max_abs(&(legacy.get(j).as_matrix() - rhs)));
    }
    Ok(residual)
}
