use detflow::operators::{
    exact_logabsdet, load_fixture, ConvOperator, DenseOperator, LinearOperator, OperatorHandle, Orientation,
    FIXTURE_NAMES,
};
use proptest::prelude::*;

fn dense(n: usize) -> impl Strategy<Value = DenseOperator> {
    prop::collection::vec(-3.0f64..3.0, n * n).prop_map(move |e| DenseOperator::from_row_major(n, e).unwrap())
}

fn conv() -> impl Strategy<Value = ConvOperator> {
    (prop::array::uniform3(prop::array::uniform3(-2.0f64..2.0)), 2usize..6, any::<bool>()).prop_map(|(f, side, flip)| {
        let o = if flip { Orientation::Convolution } else { Orientation::Correlation };
        ConvOperator::new(f, side, o).unwrap()
    })
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #[test]
    fn dense_is_linear(a in dense(5), x in prop::collection::vec(-1.0f64..1.0, 5), y in prop::collection::vec(-1.0f64..1.0, 5), c in -2.0f64..2.0) {
        let lhs: Vec<f64> = x.iter().zip(&y).map(|(u, v)| c * u + v).collect();
        let ax = a.matvec(&x).unwrap();
        let ay = a.matvec(&y).unwrap();
        let rhs: Vec<f64> = ax.iter().zip(&ay).map(|(u, v)| c * u + v).collect();
        prop_assert!(close(&a.matvec(&lhs).unwrap(), &rhs, 1e-12));
    }

    #[test]
    fn conv_matches_its_matrix(op in conv(), seed in any::<u64>()) {
        let n = op.dim();
        let x: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64 / 500.0) - 1.0).collect();
        let m = op.materialize();
        prop_assert!(close(&op.matvec(&x).unwrap(), &m.matvec(&x).unwrap(), 1e-12));
        let mut t1 = vec![0.0; n];
        let mut t2 = vec![0.0; n];
        op.apply_transpose(&x, &mut t1);
        m.apply_transpose(&x, &mut t2);
        prop_assert!(close(&t1, &t2, 1e-12));
    }

    #[test]
    fn transpose_is_adjoint(a in dense(6), x in prop::collection::vec(-1.0f64..1.0, 6), y in prop::collection::vec(-1.0f64..1.0, 6)) {
        let ax = a.matvec(&x).unwrap();
        let mut aty = vec![0.0; 6];
        a.apply_transpose(&y, &mut aty);
        let l: f64 = ax.iter().zip(&y).map(|(u, v)| u * v).sum();
        let r: f64 = x.iter().zip(&aty).map(|(u, v)| u * v).sum();
        prop_assert!((l - r).abs() < 1e-10);
    }

    #[test]
    fn logdet_is_multiplicative(a in dense(4), b in dense(4)) {
        let la = exact_logabsdet(&a);
        let lb = exact_logabsdet(&b);
        prop_assume!(!la.is_singular() && !lb.is_singular() && la.logabs > -20.0 && lb.logabs > -20.0);
        let lab = exact_logabsdet(&a.matmul(&b).unwrap());
        prop_assert!((lab.logabs - la.logabs - lb.logabs).abs() < 1e-8);
        prop_assert_eq!(lab.sign, la.sign * lb.sign);
    }

    #[test]
    fn scaling_multiplies_det_by_c_to_the_n(a in dense(5), c in 0.1f64..4.0) {
        let la = exact_logabsdet(&a);
        prop_assume!(!la.is_singular() && la.logabs > -20.0);
        let lc = exact_logabsdet(&a.scaled(c));
        prop_assert!((lc.logabs - la.logabs - 5.0 * c.ln()).abs() < 1e-9);
    }
}

#[test]
fn every_fixture_loads_and_is_nonsingular() {
    for name in FIXTURE_NAMES {
        let op = load_fixture(name).unwrap();
        let ld = exact_logabsdet(&op.materialize());
        assert!(!ld.is_singular(), "{name}");
    }
}

#[test]
fn operator_files_roundtrip() {
    for name in ["A3", "conv16", "cover3x3"] {
        let op = load_fixture(name).unwrap();
        let back = OperatorHandle::from_json_str(&op.to_json_string().unwrap()).unwrap();
        assert_eq!(back, op);
    }
}
