//! Mean-square stability: the closed-loop block operator `𝒜`, the coupled
//! Lyapunov stack used for policy evaluation, the moment (`S`) equations, the
//! dual operator pair and the reduced two-matrix system.
//!
//! Coordinates: the moment state is `(ΔX⁰, .., ΔX^{d-1}, X^d)` with
//! `ΔX^i = X^i - X^{i+1}`, vectorized row-major and stacked. `𝒜` maps it one
//! step forward; `𝒜'` drives the Lyapunov stack `(P⁰, .., P^d)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix_kit::{kron, matrix_power, max_abs, solve_with_condition, spectral_radius, unvec, vec, SymMatrix};
use crate::plant::{CostWeights, SystemModel};

/// `ρ(𝒜)` must be below `1 - STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;
/// Lyapunov systems with a larger 1-norm condition number are rejected.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Largest tolerated asymmetry of a solved stack before symmetrization.
pub const ASYMMETRY_LIMIT: f64 = 1e-9;
/// Equation residual bound, relative to `max(1, max |P|, max |Q|)`.
pub const RESIDUAL_LIMIT: f64 = 1e-10;
/// Eigenvalue slack for PSD checks of solved stacks.
pub const PSD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopOperator {
    n: usize,
    delay: usize,
    assembled: DMatrix<f64>,
}

impl ClosedLoopOperator {
    pub fn assembled(&self) -> &DMatrix<f64> {
        &self.assembled
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Block `(row, col)`, both in `0..=d`.
    pub fn block(&self, row: usize, col: usize) -> DMatrix<f64> {
        let s = self.n * self.n;
        self.assembled.view((row * s, col * s), (s, s)).into_owned()
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.assembled)
    }

    /// Applies `𝒜` to a moment stack `(X⁰, .., X^d)`, returning the next stack.
    pub fn step_moments(&self, stack: &[SymMatrix]) -> Result<Vec<SymMatrix>> {
        let v = moment_coordinates(stack)?;
        from_moment_coordinates(&(&self.assembled * v), self.n)
    }
}

/// Stacks `vec(ΔX⁰), .., vec(ΔX^{d-1}), vec(X^d)`.
pub fn moment_coordinates(stack: &[SymMatrix]) -> Result<DVector<f64>> {
    let d = stack.len().checked_sub(1).ok_or_else(|| Error::Dimension("empty moment stack".into()))?;
    let parts: Vec<DVector<f64>> = (0..=d)
        .map(|i| {
            if i < d {
                vec(&(stack[i].as_matrix() - stack[i + 1].as_matrix()))
            } else {
                vec(stack[d].as_matrix())
            }
        })
        .collect();
    Ok(concat(&parts))
}

/// Inverse of [`moment_coordinates`].
pub fn from_moment_coordinates(v: &DVector<f64>, n: usize) -> Result<Vec<SymMatrix>> {
    let blocks = split(v, n)?;
    let d = blocks.len() - 1;
    let mut out = vec![SymMatrix::zeros(n); d + 1];
    let mut acc = blocks[d].clone();
    out[d] = SymMatrix::symmetrize(&acc);
    for i in (0..d).rev() {
        acc += &blocks[i];
        out[i] = SymMatrix::symmetrize(&acc);
    }
    Ok(out)
}

fn concat(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

fn split(v: &DVector<f64>, n: usize) -> Result<Vec<DMatrix<f64>>> {
    let s = n * n;
    if s == 0 || v.len() % s != 0 || v.len() < s {
        return Err(Error::Dimension(format!("vector of length {} is not a stack of {n}x{n} blocks", v.len())));
    }
    (0..v.len() / s)
        .map(|i| unvec(&v.rows(i * s, s).into_owned(), n, n))
        .collect()
}

pub fn build_closed_loop_operator(model: &SystemModel, gain: &DMatrix<f64>) -> Result<ClosedLoopOperator> {
    model.check()?;
    model.check_gain(gain)?;
    let n = model.n();
    let d = model.delay;
    let s = n * n;
    let closed = &model.a - &model.b * gain;
    let closed_bar = &model.a_bar - &model.b_bar * gain;
    let aa = kron(&model.a, &model.a);
    let abab = kron(&model.a_bar, &model.a_bar);

    let mut big = DMatrix::zeros(s * (d + 1), s * (d + 1));
    let mut put = |r: usize, c: usize, blk: &DMatrix<f64>| {
        let mut view = big.view_mut((r * s, c * s), (s, s));
        view += blk;
    };
    for c in 0..d {
        put(0, c, &abab);
    }
    put(0, d, &kron(&closed_bar, &closed_bar));
    for r in 1..=d {
        put(r, r - 1, &aa);
    }
    put(d, d, &kron(&closed, &closed));
    Ok(ClosedLoopOperator { n, delay: d, assembled: big })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityVerdict {
    pub stabilizing: bool,
    pub radius: f64,
}

pub fn is_ms_stabilizing(model: &SystemModel, gain: &DMatrix<f64>) -> Result<StabilityVerdict> {
    let radius = build_closed_loop_operator(model, gain)?.spectral_radius()?;
    Ok(StabilityVerdict {
        stabilizing: radius < 1.0 - STABILITY_MARGIN,
        radius,
    })
}

/// `P⁰, .., P^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovStack {
    pub p: Vec<SymMatrix>,
}

impl LyapunovStack {
    pub fn delay(&self) -> usize {
        self.p.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.p[0].dim()
    }

    /// `P^d`.
    pub fn last(&self) -> &SymMatrix {
        &self.p[self.p.len() - 1]
    }

    pub fn first(&self) -> &SymMatrix {
        &self.p[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.p.iter().map(|p| p.min_eigenvalue()).fold(f64::INFINITY, f64::min)
    }

    /// Checks `P^d ⪯ P^{d-1} ⪯ .. ⪯ P⁰` up to `slack`.
    pub fn is_ordered(&self, slack: f64) -> bool {
        self.p.windows(2).all(|w| w[0].sub(&w[1]).min_eigenvalue() >= -slack)
    }

    pub fn max_abs_diff(&self, other: &LyapunovStack) -> f64 {
        self.p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| max_abs(&(a.as_matrix() - b.as_matrix())))
            .fold(0.0, f64::max)
    }
}

/// `S⁰, .., S^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStack {
    pub s: Vec<SymMatrix>,
}

impl MomentStack {
    pub fn min_eigenvalue(&self) -> f64 {
        self.s.iter().map(|s| s.min_eigenvalue()).fold(f64::INFINITY, f64::min)
    }
}

/// Constant terms for policy evaluation: `Q` in the chain and `Q + K'RK` last.
pub fn policy_qstack(weights: &CostWeights, gain: &DMatrix<f64>, delay: usize) -> Vec<SymMatrix> {
    let mut out = vec![weights.q.clone(); delay];
    out.push(weights.q.add(&weights.r.congruence(gain)));
    out
}

fn check_stack_dims(stack: &[SymMatrix], model: &SystemModel, what: &str) -> Result<()> {
    if stack.len() != model.delay + 1 || stack.iter().any(|q| q.dim() != model.n()) {
        return Err(Error::Dimension(format!(
            "{what} must hold {} matrices of size {}",
            model.delay + 1,
            model.n()
        )));
    }
    Ok(())
}

fn solve_stacked(system: &DMatrix<f64>, rhs: &DVector<f64>, n: usize) -> Result<Vec<SymMatrix>> {
    let (sol, condition) = solve_with_condition(system, rhs)?;
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::Degenerate { condition });
    }
    let blocks = split(&sol, n)?;
    let scale = blocks.iter().map(max_abs).fold(1.0, f64::max);
    let asym = blocks
        .iter()
        .map(|b| max_abs(&(b - b.transpose())))
        .fold(0.0, f64::max);
    if asym > ASYMMETRY_LIMIT * scale {
        return Err(Error::Numerical(format!("solved stack asymmetric by {asym:.3e}")));
    }
    Ok(blocks.iter().map(SymMatrix::symmetrize).collect())
}

/// Solves `P^{i-1} = A'P^iA + Ā'P⁰Ā + Qs_{i-1}` (`i = 1..d`) and
/// `P^d = (A-BK)'P^d(A-BK) + (Ā-B̄K)'P⁰(Ā-B̄K) + Qs_d` as `(I - 𝒜')p = q`.
pub fn solve_lyapunov_stack(model: &SystemModel, gain: &DMatrix<f64>, qstack: &[SymMatrix]) -> Result<LyapunovStack> {
    check_stack_dims(qstack, model, "constant stack")?;
    let op = build_closed_loop_operator(model, gain)?;
    let dim = op.assembled.nrows();
    let system = DMatrix::identity(dim, dim) - op.assembled.transpose();
    let rhs = concat(&qstack.iter().map(|q| vec(q.as_matrix())).collect::<Vec<_>>());
    let stack = LyapunovStack {
        p: solve_stacked(&system, &rhs, model.n())?,
    };
    let residual = lyapunov_residual(model, gain, qstack, &stack);
    let scale = stack
        .p
        .iter()
        .chain(qstack)
        .map(|m| max_abs(m.as_matrix()))
        .fold(1.0, f64::max);
    if residual > RESIDUAL_LIMIT * scale {
        return Err(Error::Numerical(format!("Lyapunov stack residual {residual:.3e}")));
    }
    Ok(stack)
}

/// Largest entrywise residual over all `d + 1` equations solved by [`solve_lyapunov_stack`].
pub fn lyapunov_residual(model: &SystemModel, gain: &DMatrix<f64>, qstack: &[SymMatrix], stack: &LyapunovStack) -> f64 {
    let f = dual_f(model, gain, &stack.p);
    stack
        .p
        .iter()
        .zip(&f)
        .zip(qstack)
        .map(|((p, fp), q)| max_abs(&(p.as_matrix() - fp - q.as_matrix())))
        .fold(0.0, f64::max)
}

/// Solves the moment equations `S = g(S) + (0, .., 0, Q)` and checks `S ⪰ 0`.
pub fn solve_moment_equations(model: &SystemModel, gain: &DMatrix<f64>, q: &SymMatrix) -> Result<MomentStack> {
    if q.dim() != model.n() {
        return Err(Error::Dimension(format!("Q must be {0}x{0}", model.n())));
    }
    let op = build_closed_loop_operator(model, gain)?;
    let dim = op.assembled.nrows();
    let s = model.n() * model.n();
    let system = DMatrix::identity(dim, dim) - &op.assembled;
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(model.delay * s, s).copy_from(&vec(q.as_matrix()));
    let stack = MomentStack {
        s: solve_stacked(&system, &rhs, model.n())?,
    };
    let min = stack.min_eigenvalue();
    if min < -PSD_SLACK {
        return Err(Error::Numerical(format!("moment stack not PSD (min eigenvalue {min:.3e})")));
    }
    Ok(stack)
}

/// `f(P)` without constant terms: block `i-1` is `Ā'P⁰Ā + A'P^iA` for
/// `i = 1..d` and block `d` is `(Ā-B̄K)'P⁰(Ā-B̄K) + (A-BK)'P^d(A-BK)`.
pub fn dual_f(model: &SystemModel, gain: &DMatrix<f64>, p: &[SymMatrix]) -> Vec<DMatrix<f64>> {
    let d = model.delay;
    let (a, ab) = (&model.a, &model.a_bar);
    let closed = a - &model.b * gain;
    let closed_bar = ab - &model.b_bar * gain;
    let noise = ab.transpose() * p[0].as_matrix() * ab;
    let mut out: Vec<DMatrix<f64>> = (1..=d).map(|i| &noise + a.transpose() * p[i].as_matrix() * a).collect();
    out.push(
        closed_bar.transpose() * p[0].as_matrix() * &closed_bar + closed.transpose() * p[d].as_matrix() * &closed,
    );
    out
}

/// Adjoint of [`dual_f`] under `⟨X, Y⟩ = Σ Tr(X_i' Y_i)`; this is the moment map.
pub fn dual_g(model: &SystemModel, gain: &DMatrix<f64>, m: &[SymMatrix]) -> Vec<DMatrix<f64>> {
    let d = model.delay;
    let (a, ab) = (&model.a, &model.a_bar);
    let closed = a - &model.b * gain;
    let closed_bar = ab - &model.b_bar * gain;
    let chain: DMatrix<f64> = m[..d].iter().fold(DMatrix::zeros(model.n(), model.n()), |acc, x| acc + x.as_matrix());
    let mut out = vec![ab * chain * ab.transpose() + &closed_bar * m[d].as_matrix() * closed_bar.transpose()];
    for i in 1..d {
        out.push(a * m[i - 1].as_matrix() * a.transpose());
    }
    out.push(a * m[d - 1].as_matrix() * a.transpose() + &closed * m[d].as_matrix() * closed.transpose());
    out
}

fn inner(x: &[DMatrix<f64>], y: &[DMatrix<f64>]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a.dot(b)).sum()
}

/// `|⟨f(P), M⟩ - ⟨P, g(M)⟩|`.
pub fn duality_gap(model: &SystemModel, gain: &DMatrix<f64>, p: &[SymMatrix], m: &[SymMatrix]) -> Result<f64> {
    model.check()?;
    model.check_gain(gain)?;
    check_stack_dims(p, model, "P stack")?;
    check_stack_dims(m, model, "M stack")?;
    let pm: Vec<DMatrix<f64>> = p.iter().map(|x| x.as_matrix().clone()).collect();
    let mm: Vec<DMatrix<f64>> = m.iter().map(|x| x.as_matrix().clone()).collect();
    Ok((inner(&dual_f(model, gain, p), &mm) - inner(&pm, &dual_g(model, gain, m))).abs())
}

/// Solves the two-matrix system
/// `P⁰ = A^d' P^d A^d + Σ_{k<d} (A^k)'(Ā'P⁰Ā + Qc)A^k` together with the `P^d` equation.
pub fn solve_reduced_pair(
    model: &SystemModel,
    gain: &DMatrix<f64>,
    qeff_last: &SymMatrix,
    qconst: &SymMatrix,
) -> Result<(SymMatrix, SymMatrix)> {
    model.check()?;
    model.check_gain(gain)?;
    let n = model.n();
    if qeff_last.dim() != n || qconst.dim() != n {
        return Err(Error::Dimension(format!("constant terms must be {n}x{n}")));
    }
    let d = model.delay;
    let s = n * n;
    let closed = &model.a - &model.b * gain;
    let closed_bar = &model.a_bar - &model.b_bar * gain;
    let ad = matrix_power(&model.a, d);

    let mut top_left = DMatrix::identity(s, s);
    let mut const_sum = DMatrix::zeros(n, n);
    for k in 0..d {
        let ak = matrix_power(&model.a, k);
        let t = &model.a_bar * &ak;
        top_left -= kron(&t, &t).transpose();
        const_sum += ak.transpose() * qconst.as_matrix() * &ak;
    }
    let mut system = DMatrix::zeros(2 * s, 2 * s);
    system.view_mut((0, 0), (s, s)).copy_from(&top_left);
    system.view_mut((0, s), (s, s)).copy_from(&(-kron(&ad, &ad).transpose()));
    system
        .view_mut((s, 0), (s, s))
        .copy_from(&(-kron(&closed_bar, &closed_bar).transpose()));
    system
        .view_mut((s, s), (s, s))
        .copy_from(&(DMatrix::identity(s, s) - kron(&closed, &closed).transpose()));
    let rhs = concat(&[vec(&const_sum), vec(qeff_last.as_matrix())]);
    let mut pair = solve_stacked(&system, &rhs, n)?;
    let pd = pair.pop().unwrap();
    let p0 = pair.pop().unwrap();
    Ok((p0, pd))
}
