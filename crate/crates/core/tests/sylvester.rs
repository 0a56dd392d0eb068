//! Index of a congruent Hessian equals the index of the original.

use critfield::crit::classify;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(n: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| entries[i * 3 + j])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn congruence_preserves_index(
        n in 1usize..=3,
        b in prop::collection::vec(-2.0f64..2.0, 9),
        h in prop::collection::vec(-2.0f64..2.0, 9),
    ) {
        let b = matrix(n, &b);
        let h = matrix(n, &h);
        let h = (&h + h.transpose()) * 0.5;
        let eig = h.symmetric_eigenvalues();
        prop_assume!(eig.iter().all(|e| e.abs() > 1e-3));
        prop_assume!(b.determinant().abs() > 1e-3);
        let congruent = b.transpose() * &h * &b;
        let smallest = congruent.symmetric_eigenvalues().iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
        let tol = 1e-9 * smallest.clamp(1e-300, 1.0);
        prop_assert_eq!(classify(&congruent, tol).unwrap(), classify(&h, 1e-9).unwrap());
    }
}
