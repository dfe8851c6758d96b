use nalgebra::{DMatrix, DVector};

use super::model::{InitialData, SystemModel};
use crate::error::{Error, Result};
use crate::matrix_kit::SymMatrix;

/// One step of the exact second-moment recursion under `u_{k-d} = -K x_{k|k-d-1}`.
///
/// `stack[i] = E[x_{k|k-i-1} x_{k|k-i-1}']` for `i = 0..=d`; `stack[0]` is `E[x_k x_k']`.
pub fn step_second_moments(model: &SystemModel, gain: &DMatrix<f64>, stack: &[SymMatrix]) -> Vec<SymMatrix> {
    let d = model.delay;
    let (a, ab, b, bb) = (&model.a, &model.a_bar, &model.b, &model.b_bar);
    let xd = stack[d].as_matrix();
    let bk = b * gain;
    let bbk = bb * gain;
    let cross = |left: &DMatrix<f64>, right: &DMatrix<f64>| left * xd * right.transpose();

    let mut next = Vec::with_capacity(d + 1);
    let x0 = stack[0].as_matrix();
    let zero = a * x0 * a.transpose() + ab * x0 * ab.transpose() + cross(&bk, &bk) + cross(&bbk, &bbk)
        - cross(a, &bk)
        - cross(ab, &bbk)
        - cross(&bk, a)
        - cross(&bbk, ab);
    next.push(SymMatrix::symmetrize(&zero));
    let shared = cross(&bk, &bk) - cross(&bk, a) - cross(a, &bk);
    for i in 1..=d {
        let prev = stack[i - 1].as_matrix();
        next.push(SymMatrix::symmetrize(&(a * prev * a.transpose() + &shared)));
    }
    next
}

/// Exact moment stacks for `k = 0..=horizon`, starting from `init` at `k = 0`.
pub fn propagate_second_moments(
    model: &SystemModel,
    gain: &DMatrix<f64>,
    init: &[SymMatrix],
    horizon: usize,
) -> Result<Vec<Vec<SymMatrix>>> {
    model.check()?;
    model.check_gain(gain)?;
    if init.len() != model.delay + 1 || init.iter().any(|s| s.dim() != model.n()) {
        return Err(Error::Dimension(format!(
            "moment stack must hold {} matrices of size {}",
            model.delay + 1,
            model.n()
        )));
    }
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(init.to_vec());
    for _ in 0..horizon {
        let next = step_second_moments(model, gain, out.last().unwrap());
        out.push(next);
    }
    Ok(out)
}

/// Mean and second moment of `x_t` for `t = 0..=d` while the history inputs
/// `u_{-d}..u_{-1}` are being applied.
pub fn open_loop_moments(model: &SystemModel, init: &InitialData) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    model.check()?;
    init.check(model)?;
    let (a, ab, b, bb) = (&model.a, &model.a_bar, &model.b, &model.b_bar);
    let mut mean = init.x0.clone();
    let mut second = &init.x0 * init.x0.transpose();
    let mut out = vec![(mean.clone(), second.clone())];
    for u in &init.u_hist {
        let uu = u * u.transpose();
        let mu = &mean * u.transpose();
        let next_second = a * &second * a.transpose()
            + ab * &second * ab.transpose()
            + a * &mu * b.transpose()
            + b * mu.transpose() * a.transpose()
            + ab * &mu * bb.transpose()
            + bb * mu.transpose() * ab.transpose()
            + b * &uu * b.transpose()
            + bb * &uu * bb.transpose();
        mean = a * &mean + b * u;
        second = (&next_second + next_second.transpose()) * 0.5;
        out.push((mean.clone(), second.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_kit::{mat_outer, matrix_power};
    use crate::plant::model::example_system;

    #[test]
    fn deterministic_moments_are_outer_products() {
        let (mut model, _, _) = example_system();
        model.a_bar.fill(0.0);
        model.b_bar.fill(0.0);
        let x0 = DVector::from_vec(vec![0.4, 0.6]);
        let init = vec![mat_outer(&x0); 3];
        let stacks = propagate_second_moments(&model, &DMatrix::zeros(1, 2), &init, 12).unwrap();
        for (k, stack) in stacks.iter().enumerate() {
            let expect = mat_outer(&(matrix_power(&model.a, k) * &x0));
            for s in stack {
                assert!((s.as_matrix() - expect.as_matrix()).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn stabilizing_gain_drives_moments_to_zero() {
        let (model, _, _) = example_system();
        let k = DMatrix::from_row_slice(1, 2, &[0.8558, -0.2243]);
        let x0 = DVector::from_vec(vec![1.0, -1.0]);
        let init = vec![mat_outer(&x0); 3];
        let stacks = propagate_second_moments(&model, &k, &init, 300).unwrap();
        for s in stacks.last().unwrap() {
            assert!(s.trace() < 1e-10);
        }
    }

    #[test]
    fn open_loop_moments_without_noise_are_deterministic() {
        let (mut model, _, init) = example_system();
        model.a_bar.fill(0.0);
        model.b_bar.fill(0.0);
        let m = open_loop_moments(&model, &init).unwrap();
        assert_eq!(m.len(), 3);
        let (mean, second) = &m[2];
        assert!((mean - DVector::from_vec(vec![-0.504, 0.06])).amax() < 1e-15);
        assert!((second - mean * mean.transpose()).amax() < 1e-15);
    }
}
