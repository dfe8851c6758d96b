use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix_kit::{ensure_finite, SymMatrix};

/// `x_{k+1} = (A + w_k Ā) x_k + (B + w_k B̄) u_{k-d}` with scalar white noise `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub delay: usize,
}

/// The part of the plant a model-blind learner is allowed to see.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownPart {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub delay: usize,
}

impl SystemModel {
    pub fn new(
        a: DMatrix<f64>,
        a_bar: DMatrix<f64>,
        b: DMatrix<f64>,
        b_bar: DMatrix<f64>,
        delay: usize,
    ) -> Result<Self> {
        let model = Self { a, a_bar, b, b_bar, delay };
        model.check()?;
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn known_part(&self) -> KnownPart {
        KnownPart {
            a: self.a.clone(),
            b: self.b.clone(),
            delay: self.delay,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        let violations = dimension_violations(self);
        if let Some(first) = violations.into_iter().next() {
            return Err(Error::Dimension(first));
        }
        for (m, what) in [
            (&self.a, "A"),
            (&self.a_bar, "Abar"),
            (&self.b, "B"),
            (&self.b_bar, "Bbar"),
        ] {
            ensure_finite(m, what)?;
        }
        Ok(())
    }

    pub(crate) fn check_gain(&self, k: &DMatrix<f64>) -> Result<()> {
        if k.shape() != (self.m(), self.n()) {
            return Err(Error::Dimension(format!(
                "gain must be {}x{}, got {}x{}",
                self.m(),
                self.n(),
                k.nrows(),
                k.ncols()
            )));
        }
        ensure_finite(k, "gain")
    }
}

impl KnownPart {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

fn dimension_violations(model: &SystemModel) -> Vec<String> {
    let mut out = Vec::new();
    let n = model.a.nrows();
    let m = model.b.ncols();
    if n == 0 || !model.a.is_square() {
        out.push(format!(
            "dimension mismatch: A must be square and nonempty, got {}x{}",
            model.a.nrows(),
            model.a.ncols()
        ));
    }
    if model.a_bar.shape() != (n, n) {
        out.push(format!(
            "dimension mismatch: Abar must be {n}x{n}, got {}x{}",
            model.a_bar.nrows(),
            model.a_bar.ncols()
        ));
    }
    if m == 0 || model.b.nrows() != n {
        out.push(format!(
            "dimension mismatch: B must be {n}xm with m >= 1, got {}x{}",
            model.b.nrows(),
            model.b.ncols()
        ));
    }
    if model.b_bar.shape() != model.b.shape() {
        out.push(format!(
            "dimension mismatch: Bbar must be {}x{}, got {}x{}",
            model.b.nrows(),
            model.b.ncols(),
            model.b_bar.nrows(),
            model.b_bar.ncols()
        ));
    }
    if model.delay == 0 {
        out.push("delay must be at least 1".to_string());
    }
    out
}

/// Quadratic cost weights `Q ⪰ 0`, `R ≻ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: SymMatrix,
    pub r: SymMatrix,
}

pub const Q_PSD_SLACK: f64 = 1e-10;
pub const R_PD_MARGIN: f64 = 1e-10;

impl CostWeights {
    pub fn new(q: SymMatrix, r: SymMatrix) -> Result<Self> {
        let w = Self { q, r };
        if let Some(v) = weight_violations(&w).into_iter().next() {
            return Err(Error::Input(v));
        }
        Ok(w)
    }
}

fn weight_violations(w: &CostWeights) -> Vec<String> {
    let mut out = Vec::new();
    if w.q.min_eigenvalue() < -Q_PSD_SLACK {
        out.push("Q not positive semi-definite".to_string());
    }
    if w.r.min_eigenvalue() <= R_PD_MARGIN {
        out.push("R not positive definite".to_string());
    }
    out
}

/// `x_0` and the inputs `u_{-d}, .., u_{-1}` already in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub x0: DVector<f64>,
    pub u_hist: Vec<DVector<f64>>,
}

impl InitialData {
    pub fn zeros(n: usize, m: usize, delay: usize) -> Self {
        Self {
            x0: DVector::zeros(n),
            u_hist: vec![DVector::zeros(m); delay],
        }
    }

    pub fn check(&self, model: &SystemModel) -> Result<()> {
        if self.x0.len() != model.n() {
            return Err(Error::Dimension(format!(
                "x0 has length {}, expected {}",
                self.x0.len(),
                model.n()
            )));
        }
        if self.u_hist.len() != model.delay {
            return Err(Error::Dimension(format!(
                "input history has {} entries, expected d = {}",
                self.u_hist.len(),
                model.delay
            )));
        }
        if let Some(u) = self.u_hist.iter().find(|u| u.len() != model.m()) {
            return Err(Error::Dimension(format!(
                "history input has length {}, expected {}",
                u.len(),
                model.m()
            )));
        }
        if self.x0.iter().chain(self.u_hist.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial data"));
        }
        Ok(())
    }
}

/// Outcome of [`validate_model`]; empty `violations` means the pair is usable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_model(model: &SystemModel, weights: &CostWeights) -> ValidationReport {
    let mut violations = dimension_violations(model);
    let n = model.a.nrows();
    let m = model.b.ncols();
    if weights.q.dim() != n {
        violations.push(format!(
            "dimension mismatch: Q must be {n}x{n}, got {0}x{0}",
            weights.q.dim()
        ));
    }
    if weights.r.dim() != m {
        violations.push(format!(
            "dimension mismatch: R must be {m}x{m}, got {0}x{0}",
            weights.r.dim()
        ));
    }
    for (mat, what) in [
        (&model.a, "A"),
        (&model.a_bar, "Abar"),
        (&model.b, "B"),
        (&model.b_bar, "Bbar"),
    ] {
        if mat.iter().any(|v| !v.is_finite()) {
            violations.push(format!("{what} has non-finite entries"));
        }
    }
    violations.extend(weight_violations(weights));
    ValidationReport { violations }
}

/// Plant, weights and initial data of the bundled two-state example (`d = 2`).
pub fn example_system() -> (SystemModel, CostWeights, InitialData) {
    let model = SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[1.1, -0.3, 1.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -0.18, 0.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[-0.1, 0.08]),
        2,
    )
    .expect("bundled model is well formed");
    let weights = CostWeights::new(
        SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap(),
        SymMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap(),
    )
    .expect("bundled weights are valid");
    let init = InitialData {
        x0: DVector::from_vec(vec![0.4, 0.6]),
        u_hist: vec![DVector::from_element(1, -0.2), DVector::from_element(1, -0.45)],
    };
    (model, weights, init)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_example_validates() {
        let (model, weights, init) = example_system();
        assert!(validate_model(&model, &weights).passed());
        init.check(&model).unwrap();
    }

    #[test]
    fn zero_r_is_rejected() {
        let (model, mut weights, _) = example_system();
        weights.r = SymMatrix::zeros(1);
        let report = validate_model(&model, &weights);
        assert!(!report.passed());
        assert!(report.violations.iter().any(|v| v == "R not positive definite"));
    }

    #[test]
    fn wrong_b_shape_is_a_dimension_mismatch() {
        let (mut model, weights, _) = example_system();
        model.b = DMatrix::zeros(3, 1);
        let report = validate_model(&model, &weights);
        assert!(report.violations.iter().any(|v| v.starts_with("dimension mismatch")));
        assert!(matches!(model.check(), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_delay_is_rejected() {
        let (model, _, _) = example_system();
        let r = SystemModel::new(model.a, model.a_bar, model.b, model.b_bar, 0);
        assert!(r.is_err());
    }
}
