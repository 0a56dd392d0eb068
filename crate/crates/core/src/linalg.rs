//! Small dense helpers for the 1×1 to 3×3 symmetric matrices that appear as
//! Hessians.

use nalgebra::{DMatrix, DVector, Matrix3};

/// Eigenvalues of a symmetric matrix in ascending order. Only the upper
/// triangle is read.
pub fn symmetric_eigenvalues(h: &DMatrix<f64>) -> Vec<f64> {
    let n = h.nrows();
    let mut eig = match n {
        0 => Vec::new(),
        1 => vec![h[(0, 0)]],
        2 => {
            let (a, b, d) = (h[(0, 0)], h[(0, 1)], h[(1, 1)]);
            let mid = 0.5 * (a + d);
            let rad = (0.5 * (a - d)).hypot(b);
            vec![mid - rad, mid + rad]
        }
        3 => {
            let m = Matrix3::new(
                h[(0, 0)],
                h[(0, 1)],
                h[(0, 2)],
                h[(0, 1)],
                h[(1, 1)],
                h[(1, 2)],
                h[(0, 2)],
                h[(1, 2)],
                h[(2, 2)],
            );
            m.symmetric_eigenvalues().iter().copied().collect()
        }
        _ => {
            let sym = DMatrix::from_fn(n, n, |i, j| if i <= j { h[(i, j)] } else { h[(j, i)] });
            sym.symmetric_eigenvalues().iter().copied().collect()
        }
    };
    eig.sort_by(f64::total_cmp);
    eig
}

/// Copies the upper triangle onto the lower one.
pub fn symmetrize_from_upper(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    for i in 0..n {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
}

/// Solves `h x = rhs`, returning `None` when `h` is numerically singular
/// relative to its own scale.
pub fn solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.amax();
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let n = h.nrows() as i32;
    let det = h.determinant();
    if det.abs() <= 1e-13 * scale.powi(n) {
        return None;
    }
    h.clone().lu().solve(rhs)
}

/// Euclidean norm of a slice.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
