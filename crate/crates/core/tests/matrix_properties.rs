use delaylqr::matrix_kit::*;
use delaylqr::sampling::{random_model, random_sym, uniform_matrix};
use delaylqr::stability::duality_gap;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn square(max: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max).prop_flat_map(|n| {
        prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
    })
}

fn pair(max: usize) -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
    (1..=max).prop_flat_map(|n| {
        (
            prop::collection::vec(-1.0f64..1.0, n * n),
            prop::collection::vec(-1.0f64..1.0, n * n),
        )
            .prop_map(move |(a, p)| (DMatrix::from_row_slice(n, n, &a), DMatrix::from_row_slice(n, n, &p)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn congruence_matches_kron_transpose((a, p) in pair(4)) {
        let lhs = vec(&(a.transpose() * &p * &a));
        let rhs = kron(&a, &a).transpose() * vec(&p);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn sandwich_matches_kron((a, p) in pair(4)) {
        let lhs = vec(&(&a * &p * a.transpose()));
        let rhs = kron(&a, &a) * vec(&p);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn weighted_svec_pairs_quadratic_forms(m in square(5), seed in any::<u64>()) {
        let p = SymMatrix::symmetrize(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DVector::from_iterator(p.dim(), uniform_matrix(&mut rng, p.dim(), 1, 1.0).iter().copied());
        let paired = svec(&p).dot(&svec_weighted(&mat_outer(&x)));
        prop_assert!((paired - p.quad_form(&x)).abs() < 1e-12);
    }

    #[test]
    fn vectorizations_round_trip(m in square(5)) {
        let n = m.nrows();
        prop_assert_eq!(unvec(&vec(&m), n, n).unwrap(), m.clone());
        let s = SymMatrix::symmetrize(&m);
        prop_assert_eq!(unsvec(svec(&s).as_slice(), n).unwrap(), s);
    }

    #[test]
    fn spectral_radius_is_homogeneous(m in square(5), c in -3.0f64..3.0) {
        let r = spectral_radius(&m).unwrap();
        let rc = spectral_radius(&(&m * c)).unwrap();
        prop_assert!((rc - c.abs() * r).abs() <= 1e-9 * (c.abs() * r).max(1e-3));
    }

    #[test]
    fn dual_operators_are_adjoint(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 + (seed % 3) as usize;
        let m = 1 + (seed / 3 % 2) as usize;
        let d = 1 + (seed / 6 % 3) as usize;
        let model = random_model(&mut rng, n, m, d, 1.0, 0.5);
        let k = uniform_matrix(&mut rng, m, n, 1.0);
        let p: Vec<SymMatrix> = (0..=d).map(|_| random_sym(&mut rng, n, 1.0)).collect();
        let q: Vec<SymMatrix> = (0..=d).map(|_| random_sym(&mut rng, n, 1.0)).collect();
        prop_assert!(duality_gap(&model, &k, &p, &q).unwrap() < 1e-10);
    }
}

#[test]
fn worked_examples() {
    let p = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 5.0])).unwrap();
    let x = DVector::from_vec(vec![1.0, 2.0]);
    assert_eq!(svec(&p).dot(&svec_weighted(&mat_outer(&x))), 27.0);
    let diag = spectral_radius(&DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.3])).unwrap();
    assert!((diag - 0.5).abs() < 1e-12);
    let rot = spectral_radius(&DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
    assert!((rot - 1.0).abs() < 1e-12);
}
