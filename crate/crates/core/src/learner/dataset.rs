use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use super::regression::{build_regression_row, unknown_count, LearningDataset};
use crate::error::{Error, Result};
use crate::plant::{CostWeights, KnownPart, Trajectory};

/// How per-sample rows are combined across rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowWeighting {
    /// Rows are weighted by quadratic monomials of `(x_{k-d}, u_{k-2d}, .., u_{k-d})`,
    /// pooled over all `k` and rollouts, and whitened by the instruments' second
    /// moment (two-stage least squares). The rows have conditional mean zero given
    /// those variables, so this is consistent while per-time averages are not
    /// identified for the `M̂` block.
    #[default]
    Instrumented,
    /// One row per time index, averaged over rollouts.
    TimeAverage,
}

/// Neumaier-compensated running sum of equally shaped matrices.
#[derive(Debug, Clone)]
struct Compensated {
    sum: DMatrix<f64>,
    carry: DMatrix<f64>,
}

impl Compensated {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            sum: DMatrix::zeros(rows, cols),
            carry: DMatrix::zeros(rows, cols),
        }
    }

    fn add(&mut self, x: &DMatrix<f64>) {
        for ((s, c), v) in self.sum.iter_mut().zip(self.carry.iter_mut()).zip(x.iter()) {
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
    }

    fn total(&self) -> DMatrix<f64> {
        &self.sum + &self.carry
    }
}

/// `[1, y_a y_b (a <= b)]` with `y = (x_{k-d}, u_{k-2d}, .., u_{k-d})`.
pub fn instrument_features(traj: &Trajectory, k: usize) -> DVector<f64> {
    let d = traj.delay;
    let mut y: Vec<f64> = traj.state(k - d).iter().copied().collect();
    for t in (k as isize - 2 * d as isize)..=(k as isize - d as isize) {
        y.extend(traj.input(t).iter());
    }
    let mut out = Vec::with_capacity(1 + y.len() * (y.len() + 1) / 2);
    out.push(1.0);
    for a in 0..y.len() {
        for b in a..y.len() {
            out.push(y[a] * y[b]);
        }
    }
    DVector::from_vec(out)
}

/// Number of instrument rows for `(n, m, d)`.
pub fn instrument_count(n: usize, m: usize, d: usize) -> usize {
    let q = n + (d + 1) * m;
    1 + q * (q + 1) / 2
}

/// Builds `Θ`, `Γ` from rollouts for rows `k` in `rows` (`d <= k < N`).
pub fn assemble_dataset(
    trajectories: &[Trajectory],
    gain: &DMatrix<f64>,
    known: &KnownPart,
    weights: &CostWeights,
    rows: std::ops::Range<usize>,
    weighting: RowWeighting,
) -> Result<LearningDataset> {
    let (n, m, d) = (known.n(), known.m(), known.delay);
    if trajectories.is_empty() || rows.is_empty() {
        return Err(Error::Input("no data to assemble".into()));
    }
    let l1 = unknown_count(n, m, d);
    let samples = trajectories.len() * rows.len();
    match weighting {
        RowWeighting::TimeAverage => {
            let per_rollout = trajectories
                .par_iter()
                .map(|traj| {
                    let mut z = DMatrix::zeros(rows.len(), l1 + 1);
                    for (row, k) in rows.clone().enumerate() {
                        let (zk, rk) = build_regression_row(traj, k, gain, known, weights)?;
                        z.view_mut((row, 0), (1, l1)).copy_from(&zk.transpose());
                        z[(row, l1)] = rk;
                    }
                    Ok(z)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut acc = Compensated::new(rows.len(), l1 + 1);
            per_rollout.iter().for_each(|z| acc.add(z));
            let mean = acc.total() / trajectories.len() as f64;
            Ok(LearningDataset {
                theta: mean.columns(0, l1).into_owned(),
                gamma: mean.column(l1).into_owned(),
                n,
                m,
                delay: d,
                samples,
            })
        }
        RowWeighting::Instrumented => {
            let l = instrument_count(n, m, d);
            // per rollout: [Σ ψ z' | Σ ψ r | Σ ψ ψ']
            let per_rollout = trajectories
                .par_iter()
                .map(|traj| {
                    let mut acc = DMatrix::zeros(l, l1 + 1 + l);
                    for k in rows.clone() {
                        let (zk, rk) = build_regression_row(traj, k, gain, known, weights)?;
                        let psi = instrument_features(traj, k);
                        let mut row = DVector::zeros(l1 + 1 + l);
                        row.rows_mut(0, l1).copy_from(&zk);
                        row[l1] = rk;
                        row.rows_mut(l1 + 1, l).copy_from(&psi);
                        acc += &psi * row.transpose();
                    }
                    Ok(acc)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut acc = Compensated::new(l, l1 + 1 + l);
            per_rollout.iter().for_each(|z| acc.add(z));
            let moments = acc.total() / samples as f64;
            let fz = moments.columns(0, l1).into_owned();
            let fr = moments.column(l1).into_owned();
            let ff = moments.columns(l1 + 1, l).into_owned();
            let ff = (&ff + ff.transpose()) * 0.5;
            let chol = ff.clone().cholesky().ok_or_else(|| {
                let eig = SymmetricEigen::new(ff.clone()).eigenvalues;
                let top = eig.amax();
                let rank = eig.iter().filter(|e| **e > 1e-12 * top).count();
                Error::InsufficientExcitation {
                    rank,
                    required: l,
                    detail: "instrument second-moment matrix is singular; inputs are not excited".into(),
                }
            })?;
            let lower = chol.l();
            let theta = lower
                .solve_lower_triangular(&fz)
                .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
            let gamma = lower
                .solve_lower_triangular(&fr)
                .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
            Ok(LearningDataset {
                theta,
                gamma,
                n,
                m,
                delay: d,
                samples,
            })
        }
    }
}
