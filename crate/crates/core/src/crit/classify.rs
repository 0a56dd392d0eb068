use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;

/// Morse index of a symmetric matrix: the number of eigenvalues below
/// `-tol_eig`. Errors when any eigenvalue lies in `[-tol_eig, tol_eig]`.
pub fn classify(hessian: &DMatrix<f64>, tol_eig: f64) -> Result<usize> {
    classify_with_eigenvalues(hessian, tol_eig).map(|(index, _)| index)
}

/// As [`classify`], also returning the ascending eigenvalues.
pub fn classify_with_eigenvalues(hessian: &DMatrix<f64>, tol_eig: f64) -> Result<(usize, Vec<f64>)> {
    let eig = symmetric_eigenvalues(hessian);
    if let Some(&bad) = eig.iter().find(|e| e.abs() <= tol_eig || !e.is_finite()) {
        return Err(Error::NearSingularHessian { eigenvalue: bad, tolerance: tol_eig });
    }
    let index = eig.iter().filter(|&&e| e < -tol_eig).count();
    Ok((index, eig))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn basic_indices() {
        assert_eq!(classify(&(-DMatrix::<f64>::identity(2, 2)), 1e-8).unwrap(), 2);
        let saddle = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(classify(&saddle, 1e-8).unwrap(), 1);
        assert_eq!(classify(&DMatrix::<f64>::identity(3, 3), 1e-8).unwrap(), 0);
    }

    #[test]
    fn near_singular_is_rejected() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-10]));
        assert!(matches!(classify(&h, 1e-8), Err(Error::NearSingularHessian { .. })));
    }

    #[test]
    fn congruence_preserves_index() {
        // H0 = diag(-1, 2, 5), B a fixed nonsingular matrix.
        let h0 = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0, 5.0]));
        let b: DMatrix<f64> = DMatrix::from_row_slice(3, 3, &[0.3, 2.0, -1.0, 1.1, 0.2, 0.7, -0.4, 0.9, 1.5]);
        assert!(b.determinant().abs() > 0.1);
        let h = b.transpose() * &h0 * &b;
        assert_eq!(classify(&h, 1e-8).unwrap(), 1);
        assert_eq!(classify(&h0, 1e-8).unwrap(), 1);
    }
}
