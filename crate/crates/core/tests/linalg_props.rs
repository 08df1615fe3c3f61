use nalgebra::DMatrix;
use proptest::prelude::*;

use fedem_core::linalg::{svd, symmetric_eigen, Cholesky, Matrix};

fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |a, b| m[(a, b)])
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::from_row_major(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn singular_values_match_reference(m in (1usize..8, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c))) {
        let ours = svd(&m);
        let mut theirs: Vec<f64> = to_na(&m).singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ours.singular_values.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b));
        }
        let k = ours.singular_values.len();
        let rebuilt = Matrix::from_fn(m.rows(), m.cols(), |a, b| {
            (0..k).map(|j| ours.u[(a, j)] * ours.singular_values[j] * ours.v[(b, j)]).sum::<f64>()
        });
        prop_assert!(rebuilt.sub(&m).frobenius_norm() <= 1e-10 * (1.0 + m.frobenius_norm()));
    }

    #[test]
    fn cholesky_and_eigen_match_reference(a in matrix(4, 4)) {
        let mut spd = a.transpose().matmul(&a);
        for k in 0..4 {
            spd[(k, k)] += 0.5;
        }
        let ch = Cholesky::new(&spd).unwrap();
        let theirs = to_na(&spd).cholesky().unwrap();
        let det: f64 = theirs.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        prop_assert!((ch.log_det() - det).abs() <= 1e-10 * (1.0 + det.abs()));
        let inv = ch.inverse();
        prop_assert!(inv.matmul(&spd).sub(&Matrix::identity(4)).frobenius_norm() <= 1e-9);
        let (vals, _) = symmetric_eigen(&spd);
        let mut ref_vals: Vec<f64> = to_na(&spd).symmetric_eigenvalues().iter().copied().collect();
        ref_vals.sort_by(f64::total_cmp);
        for (x, y) in vals.iter().zip(&ref_vals) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }
}
