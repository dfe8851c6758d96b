use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix_kit::{outer_diff, svec, svec_len, svec_weighted, unsvec, vec, SymMatrix};
use crate::plant::{propagate, CostWeights, KnownPart, Trajectory};
use crate::riccati::solve_gain;
use crate::stability::LyapunovStack;

/// Relative singular-value cutoff for the numerical rank of `Θ`.
pub const RANK_TOL: f64 = 1e-8;

/// Number of unknowns `l₁` for `(n, m, d)`.
pub fn unknown_count(n: usize, m: usize, d: usize) -> usize {
    svec_len(n) * (d + 1) + svec_len(m) + m * n
}

/// Unknowns of one policy evaluation, in the order used by [`pack`]:
/// `svec(P⁰), .., svec(P^d), vec(M̂), svec(N̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Unknowns {
    pub stack: LyapunovStack,
    /// Estimate of `B'P^dA + B̄'P⁰Ā`.
    pub mhat: DMatrix<f64>,
    /// Estimate of `B'P^dB + B̄'P⁰B̄`.
    pub nhat: SymMatrix,
}

pub fn pack(u: &Unknowns) -> DVector<f64> {
    let parts: Vec<DVector<f64>> = u
        .stack
        .p
        .iter()
        .map(svec)
        .chain([vec(&u.mhat), svec(&u.nhat)])
        .collect();
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

pub fn unpack(theta: &DVector<f64>, n: usize, m: usize, d: usize) -> Result<Unknowns> {
    if theta.len() != unknown_count(n, m, d) {
        return Err(Error::Dimension(format!(
            "parameter vector has length {}, expected {}",
            theta.len(),
            unknown_count(n, m, d)
        )));
    }
    let s = theta.as_slice();
    let sn = svec_len(n);
    let p = (0..=d)
        .map(|i| unsvec(&s[i * sn..(i + 1) * sn], n))
        .collect::<Result<Vec<_>>>()?;
    let off = (d + 1) * sn;
    let mhat = DMatrix::from_row_slice(m, n, &s[off..off + m * n]);
    let nhat = unsvec(&s[off + m * n..], m)?;
    Ok(Unknowns {
        stack: LyapunovStack { p },
        mhat,
        nhat,
    })
}

/// `x_{k|j}`: the deterministic prediction of `x_k` from `x_{j+1}` and the
/// inputs already committed at time `j`.
fn conditional(traj: &Trajectory, known: &KnownPart, k: usize, j: isize) -> DVector<f64> {
    let from = (j + 1) as usize;
    let d = known.delay as isize;
    let inputs: Vec<&DVector<f64>> = (from..k).map(|t| traj.input(t as isize - d)).collect();
    propagate(&known.a, &known.b, traj.state(from), &inputs)
}

/// Regressor `z_k` and target `r_k` at time `k` of one trajectory.
///
/// Blocks of `z`, matching [`pack`]:
/// * `P^{i-1}` (`i = 1..d`): `svec_w(δ_i(k)δ_i(k)' - δ_i(k+1)δ_i(k+1)')` with
///   `δ_i(k) = x_{k|k-i} - x_{k|k-i-1}`;
/// * `P^d`: `svec_w(x̂_k x̂_k' - x̂_{k+1} x̂_{k+1}')` with `x̂_k = x_{k|k-d-1}`;
/// * `M̂`: `2 vec((u_{k-d} + K x̂_k) x̂_k')`;
/// * `N̂`: `svec_w(u_{k-d}u_{k-d}' - K x̂_k x̂_k' K')`.
///
/// `r_k = x̂_k'K'RK x̂_k + x_k'Q x_k`. For the true unknowns of `K`,
/// `E[z_k'θ - r_k | x_{k-d}, u_{k-2d}, .., u_{k-d}] = 0`.
pub fn build_regression_row(
    traj: &Trajectory,
    k: usize,
    gain: &DMatrix<f64>,
    known: &KnownPart,
    weights: &CostWeights,
) -> Result<(DVector<f64>, f64)> {
    let d = known.delay;
    if traj.delay != d {
        return Err(Error::Input(format!("trajectory delay {} differs from d = {d}", traj.delay)));
    }
    if k < d || k + 1 > traj.horizon() {
        return Err(Error::Input(format!(
            "regression row at k = {k} needs d <= k < N (d = {d}, N = {})",
            traj.horizon()
        )));
    }
    let (n, m) = (known.n(), known.m());
    let mut parts: Vec<DVector<f64>> = Vec::with_capacity(d + 3);
    let ki = k as isize;
    for i in 1..=d as isize {
        let now = &conditional(traj, known, k, ki - i) - &conditional(traj, known, k, ki - i - 1);
        let next = &conditional(traj, known, k + 1, ki + 1 - i) - &conditional(traj, known, k + 1, ki - i);
        parts.push(svec_weighted(&outer_diff(&now, &next)));
    }
    let xhat = conditional(traj, known, k, ki - d as isize - 1);
    let xhat_next = conditional(traj, known, k + 1, ki - d as isize);
    parts.push(svec_weighted(&outer_diff(&xhat, &xhat_next)));
    let u = traj.input(ki - d as isize);
    let kx = gain * &xhat;
    parts.push(vec(&((u + &kx) * xhat.transpose() * 2.0)));
    parts.push(svec_weighted(&outer_diff(u, &kx)));

    let z = DVector::from_iterator(
        unknown_count(n, m, d),
        parts.iter().flat_map(|p| p.iter().copied()),
    );
    let r = weights.r.quad_form(&kx) + weights.q.quad_form(traj.state(k));
    Ok((z, r))
}

/// Regression system `Θ θ = Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningDataset {
    pub theta: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub n: usize,
    pub m: usize,
    pub delay: usize,
    /// Trajectory samples that entered the system.
    pub samples: usize,
}

impl LearningDataset {
    pub fn row_count(&self) -> usize {
        self.theta.nrows()
    }

    pub fn unknown_count(&self) -> usize {
        self.theta.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvalResult {
    pub stack: LyapunovStack,
    pub nhat: SymMatrix,
    pub mhat: DMatrix<f64>,
    pub residual_norm: f64,
    pub theta_rank: usize,
    pub condition: f64,
}

/// Least-squares solution of `Θθ = Γ` by SVD, with optional ridge `λ`
/// (`σ / (σ² + λ)` filtering).
pub fn policy_evaluation_ls(dataset: &LearningDataset, ridge: f64) -> Result<PolicyEvalResult> {
    let l1 = unknown_count(dataset.n, dataset.m, dataset.delay);
    if dataset.unknown_count() != l1 || dataset.gamma.len() != dataset.row_count() {
        return Err(Error::Dimension("dataset shape does not match its dimensions".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Input(format!("ridge must be nonnegative, got {ridge}")));
    }
    if dataset.theta.iter().chain(dataset.gamma.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression data"));
    }
    if dataset.row_count() < l1 {
        return Err(Error::InsufficientExcitation {
            rank: dataset.row_count(),
            required: l1,
            detail: format!("only {} rows for {l1} unknowns", dataset.row_count()),
        });
    }
    let svd = dataset.theta.clone().svd(true, true);
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    let cutoff = RANK_TOL * smax;
    let rank = sigma.iter().filter(|s| **s > cutoff).count();
    if smax == 0.0 || rank < l1 {
        return Err(Error::InsufficientExcitation {
            rank,
            required: l1,
            detail: "regression matrix is rank deficient; increase exploration or data".into(),
        });
    }
    let condition = smax / sigma.min();
    let u = svd.u.as_ref().expect("requested");
    let vt = svd.v_t.as_ref().expect("requested");
    let proj = u.transpose() * &dataset.gamma;
    let filtered = DVector::from_iterator(
        sigma.len(),
        sigma.iter().zip(proj.iter()).map(|(s, p)| p * s / (s * s + ridge)),
    );
    let theta = vt.transpose() * filtered;
    let residual_norm = (&dataset.theta * &theta - &dataset.gamma).norm();
    let unknowns = unpack(&theta, dataset.n, dataset.m, dataset.delay)?;
    Ok(PolicyEvalResult {
        stack: unknowns.stack,
        nhat: unknowns.nhat,
        mhat: unknowns.mhat,
        residual_norm,
        theta_rank: rank,
        condition,
    })
}

/// `K = (R + N̂)⁻¹ M̂`.
pub fn policy_update(result: &PolicyEvalResult, weights: &CostWeights) -> Result<DMatrix<f64>> {
    if result.nhat.dim() != weights.r.dim() {
        return Err(Error::Dimension("N̂ and R differ in size".into()));
    }
    solve_gain(&weights.r.add(&result.nhat), &result.mhat).map_err(|e| match e {
        Error::DegeneratePolicy(msg) => Error::DegeneratePolicy(format!("{msg}; estimate likely needs more data")),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{example_system, simulate, Controller, Exploration, InitialData, NoiseSpec};

    #[test]
    fn counts() {
        assert_eq!(unknown_count(2, 1, 2), 12);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let theta = DVector::from_fn(12, |i, _| (i as f64 * 0.37).sin());
        let u = unpack(&theta, 2, 1, 2).unwrap();
        assert_eq!(pack(&u), theta);
        assert!(unpack(&DVector::zeros(11), 2, 1, 2).is_err());
    }

    #[test]
    fn zero_window_gives_zero_row() {
        let (model, weights, _) = example_system();
        let traj = simulate(
            &model,
            &InitialData::zeros(2, 1, 2),
            &Controller::Gain(DMatrix::from_row_slice(1, 2, &[0.5, 0.1])),
            10,
            &NoiseSpec::plant(0),
            &Exploration::None,
            0,
        )
        .unwrap();
        let (z, r) = build_regression_row(&traj, 4, &DMatrix::from_row_slice(1, 2, &[0.5, 0.1]), &model.known_part(), &weights)
            .unwrap();
        assert_eq!(z.amax(), 0.0);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn incomplete_window_is_rejected() {
        let (model, weights, init) = example_system();
        let traj = simulate(&model, &init, &Controller::OpenLoop(vec![]), 5, &NoiseSpec::plant(0), &Exploration::None, 0)
            .unwrap();
        let k = DMatrix::zeros(1, 2);
        let known = model.known_part();
        assert!(build_regression_row(&traj, 1, &k, &known, &weights).is_err());
        assert!(build_regression_row(&traj, 5, &k, &known, &weights).is_err());
        assert!(build_regression_row(&traj, 4, &k, &known, &weights).is_ok());
    }

    #[test]
    fn scalar_update() {
        let s = |v: f64| SymMatrix::new(DMatrix::from_element(1, 1, v)).unwrap();
        let weights = CostWeights::new(s(1.0), s(1.0)).unwrap();
        let res = PolicyEvalResult {
            stack: LyapunovStack { p: vec![s(1.0), s(1.0)] },
            nhat: s(1.0),
            mhat: DMatrix::from_element(1, 1, 1.0),
            residual_norm: 0.0,
            theta_rank: 5,
            condition: 1.0,
        };
        assert!((policy_update(&res, &weights).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
        let zero = PolicyEvalResult {
            mhat: DMatrix::zeros(1, 1),
            ..res.clone()
        };
        assert_eq!(policy_update(&zero, &weights).unwrap()[(0, 0)], 0.0);
        let bad = PolicyEvalResult { nhat: s(-2.0), ..res };
        assert_eq!(policy_update(&bad, &weights).unwrap_err().kind(), "degenerate_policy");
    }

    #[test]
    fn duplicated_row_is_rank_one() {
        let row = DVector::from_fn(12, |i, _| 1.0 + i as f64);
        let theta = DMatrix::from_fn(20, 12, |_, j| row[j]);
        let ds = LearningDataset {
            theta,
            gamma: DVector::from_element(20, 1.0),
            n: 2,
            m: 1,
            delay: 2,
            samples: 20,
        };
        match policy_evaluation_ls(&ds, 0.0) {
            Err(Error::InsufficientExcitation { rank, required, .. }) => assert_eq!((rank, required), (1, 12)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exact_synthetic_rows_are_inverted() {
        let truth = DVector::from_fn(12, |i, _| (i as f64 + 1.0).ln() - 0.7);
        let mut rng = crate::plant::stream_rng(5, 0, crate::plant::StreamKind::Plant);
        let theta = DMatrix::from_fn(30, 12, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let ds = LearningDataset {
            gamma: &theta * &truth,
            theta,
            n: 2,
            m: 1,
            delay: 2,
            samples: 30,
        };
        let res = policy_evaluation_ls(&ds, 0.0).unwrap();
        let got = pack(&Unknowns {
            stack: res.stack,
            mhat: res.mhat,
            nhat: res.nhat,
        });
        assert!((got - truth).amax() < 1e-8);
        assert_eq!(res.theta_rank, 12);
    }
}
