use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One bump of a sine warp: displacement `sin(⟨w, t⟩ + c) · d`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpTerm {
    pub frequency: Vec<f64>,
    pub phase: f64,
    pub direction: Vec<f64>,
}

/// Smooth, globally invertible maps `f: R^N → R^N` with closed-form first and
/// second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum Diffeomorphism {
    Identity {
        dim: usize,
    },
    /// `f(t) = A t`.
    Linear {
        matrix: DMatrix<f64>,
        inverse: DMatrix<f64>,
    },
    /// `f(t) = t + ε Σ_m sin(⟨w_m, t⟩ + c_m) d_m` with `|d_m,i| ≤ 1` and
    /// `ε Σ_m ‖w_m‖ N < 1`, which keeps the Jacobian strictly diagonally
    /// dominant and the displacement a contraction.
    SineWarp {
        amplitude: f64,
        terms: Vec<WarpTerm>,
    },
    /// `maps[last] ∘ … ∘ maps[0]`.
    Composition(Vec<Diffeomorphism>),
}

/// Value, Jacobian `B_ij = ∂f_i/∂t_j` and per-component Hessians `∇²f_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapJet {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub hessians: Vec<DMatrix<f64>>,
}

const MIN_ABS_DET: f64 = 1e-12;

impl Diffeomorphism {
    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        Ok(Diffeomorphism::Identity { dim })
    }

    pub fn linear(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::invalid(format!(
                "linear map needs a square matrix, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let det = matrix.determinant();
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        if !det.is_finite() || det.abs() <= 1e-12 * scale.powi(matrix.nrows() as i32) {
            return Err(Error::SingularMap(format!("det(A) = {det:e}")));
        }
        let inverse = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularMap("matrix is not invertible".into()))?;
        Ok(Diffeomorphism::Linear { matrix, inverse })
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        Self::linear(DMatrix::from_diagonal(&DVector::from_column_slice(entries)))
    }

    /// Planar rotation by `degrees`.
    pub fn rotation_2d(degrees: f64) -> Result<Self> {
        let (s, c) = degrees.to_radians().sin_cos();
        Self::linear(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
    }

    pub fn sine_warp(amplitude: f64, terms: Vec<WarpTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("sine warp needs at least one term"));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::invalid(format!("warp amplitude must be non-negative, got {amplitude}")));
        }
        let dim = terms[0].frequency.len();
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let mut freq_sum = 0.0;
        for term in &terms {
            if term.frequency.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: term.frequency.len() });
            }
            if term.direction.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: term.direction.len() });
            }
            if term.direction.iter().any(|d| !(d.abs() <= 1.0)) {
                return Err(Error::invalid("warp direction components must lie in [-1, 1]"));
            }
            freq_sum += crate::linalg::norm(&term.frequency);
        }
        let bound = amplitude * freq_sum * dim as f64;
        if !(bound < 1.0) {
            return Err(Error::SingularMap(format!(
                "contraction bound ε·Σ‖w‖·N = {bound} must be < 1"
            )));
        }
        Ok(Diffeomorphism::SineWarp { amplitude, terms })
    }

    pub fn compose(maps: Vec<Diffeomorphism>) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::invalid("empty composition"))?;
        let dim = first.dim();
        for m in &maps {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.dim() });
            }
        }
        Ok(Diffeomorphism::Composition(maps))
    }

    pub fn dim(&self) -> usize {
        match self {
            Diffeomorphism::Identity { dim } => *dim,
            Diffeomorphism::Linear { matrix, .. } => matrix.nrows(),
            Diffeomorphism::SineWarp { terms, .. } => terms[0].frequency.len(),
            Diffeomorphism::Composition(maps) => maps[0].dim(),
        }
    }

    pub fn is_linear(&self) -> bool {
        match self {
            Diffeomorphism::Identity { .. } | Diffeomorphism::Linear { .. } => true,
            Diffeomorphism::SineWarp { .. } => false,
            Diffeomorphism::Composition(maps) => maps.iter().all(Diffeomorphism::is_linear),
        }
    }

    pub fn forward(&self, t: &[f64]) -> DVector<f64> {
        match self {
            Diffeomorphism::Identity { .. } => DVector::from_column_slice(t),
            Diffeomorphism::Linear { matrix, .. } => matrix * DVector::from_column_slice(t),
            Diffeomorphism::SineWarp { amplitude, terms } => {
                let mut y = DVector::from_column_slice(t);
                for term in terms {
                    let s = (dot(&term.frequency, t) + term.phase).sin();
                    for i in 0..y.len() {
                        y[i] += amplitude * s * term.direction[i];
                    }
                }
                y
            }
            Diffeomorphism::Composition(maps) => {
                let mut y = DVector::from_column_slice(t);
                for m in maps {
                    y = m.forward(y.as_slice());
                }
                y
            }
        }
    }

    pub fn jacobian(&self, t: &[f64]) -> DMatrix<f64> {
        self.jet(t).jacobian
    }

    pub fn abs_det_jacobian(&self, t: &[f64]) -> f64 {
        self.jacobian(t).determinant().abs()
    }

    /// Errors if `|det B(t)|` falls below `1e-12`.
    pub fn check_nonsingular(&self, t: &[f64]) -> Result<f64> {
        let d = self.abs_det_jacobian(t);
        if d > MIN_ABS_DET {
            Ok(d)
        } else {
            Err(Error::SingularMap(format!("|det B| = {d:e} at {t:?}")))
        }
    }

    pub fn jet(&self, t: &[f64]) -> MapJet {
        let n = t.len();
        match self {
            Diffeomorphism::Identity { .. } => MapJet {
                value: DVector::from_column_slice(t),
                jacobian: DMatrix::identity(n, n),
                hessians: vec![DMatrix::zeros(n, n); n],
            },
            Diffeomorphism::Linear { matrix, .. } => MapJet {
                value: matrix * DVector::from_column_slice(t),
                jacobian: matrix.clone(),
                hessians: vec![DMatrix::zeros(n, n); n],
            },
            Diffeomorphism::SineWarp { amplitude, terms } => {
                let mut value = DVector::from_column_slice(t);
                let mut jacobian = DMatrix::identity(n, n);
                let mut hessians = vec![DMatrix::zeros(n, n); n];
                for term in terms {
                    let (s, c) = (dot(&term.frequency, t) + term.phase).sin_cos();
                    for k in 0..n {
                        let d = amplitude * term.direction[k];
                        value[k] += d * s;
                        for j in 0..n {
                            jacobian[(k, j)] += d * c * term.frequency[j];
                            for i in 0..n {
                                hessians[k][(i, j)] -= d * s * term.frequency[i] * term.frequency[j];
                            }
                        }
                    }
                }
                MapJet { value, jacobian, hessians }
            }
            Diffeomorphism::Composition(maps) => {
                let mut acc = maps[0].jet(t);
                for outer in &maps[1..] {
                    acc = compose_jets(&outer.jet(acc.value.as_slice()), &acc);
                }
                acc
            }
        }
    }

    /// Solves `f(t) = target`. Exact for linear maps; for warps a damped
    /// Newton iteration started at the target (the displacement is a
    /// contraction, so the iteration stays in its basin).
    pub fn inverse(&self, target: &[f64]) -> Result<DVector<f64>> {
        match self {
            Diffeomorphism::Identity { .. } => Ok(DVector::from_column_slice(target)),
            Diffeomorphism::Linear { inverse, .. } => Ok(inverse * DVector::from_column_slice(target)),
            Diffeomorphism::SineWarp { .. } => self.newton_inverse(target),
            Diffeomorphism::Composition(maps) => {
                let mut t = DVector::from_column_slice(target);
                for m in maps.iter().rev() {
                    t = m.inverse(t.as_slice())?;
                }
                Ok(t)
            }
        }
    }

    fn newton_inverse(&self, target: &[f64]) -> Result<DVector<f64>> {
        let y = DVector::from_column_slice(target);
        let tol = 1e-14 * (1.0 + y.amax());
        let mut t = y.clone();
        let mut resid = &y - self.forward(t.as_slice());
        let mut rnorm = resid.norm();
        for _ in 0..100 {
            if rnorm <= tol {
                return Ok(t);
            }
            let b = self.jacobian(t.as_slice());
            let step = b.lu().solve(&resid).ok_or_else(|| Error::SingularMap("warp Jacobian".into()))?;
            let mut alpha = 1.0;
            loop {
                let cand = &t + alpha * &step;
                let r = &y - self.forward(cand.as_slice());
                let rn = r.norm();
                if rn < rnorm || alpha < 1e-6 {
                    t = cand;
                    resid = r;
                    rnorm = rn;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if rnorm <= 1e-12 * (1.0 + y.amax()) {
            Ok(t)
        } else {
            Err(Error::InverseNotConverged { target: target.to_vec(), residual: rnorm })
        }
    }

    /// Upper bound on `sup_t ‖B(t) e_j‖` for every column `j`.
    pub fn column_stretch_bound(&self) -> Vec<f64> {
        let n = self.dim();
        match self {
            Diffeomorphism::Identity { .. } => vec![1.0; n],
            Diffeomorphism::Linear { matrix, .. } => (0..n).map(|j| matrix.column(j).norm()).collect(),
            Diffeomorphism::SineWarp { amplitude, terms } => (0..n)
                .map(|j| {
                    1.0 + terms
                        .iter()
                        .map(|t| amplitude * crate::linalg::norm(&t.direction) * t.frequency[j].abs())
                        .sum::<f64>()
                })
                .collect(),
            Diffeomorphism::Composition(maps) => {
                let mut cols = maps[0].column_stretch_bound();
                for m in &maps[1..] {
                    let op = crate::linalg::norm(&m.column_stretch_bound());
                    for c in cols.iter_mut() {
                        *c *= op;
                    }
                }
                cols
            }
        }
    }

    /// Axis-aligned box containing `f([lower, upper])`.
    pub fn image_bounding_box(&self, lower: &[f64], upper: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = lower.len();
        match self {
            Diffeomorphism::Identity { .. } => (lower.to_vec(), upper.to_vec()),
            Diffeomorphism::Linear { matrix, .. } => {
                let mut lo = vec![f64::INFINITY; n];
                let mut hi = vec![f64::NEG_INFINITY; n];
                for corner in 0..(1usize << n) {
                    let c: Vec<f64> =
                        (0..n).map(|i| if corner >> i & 1 == 1 { upper[i] } else { lower[i] }).collect();
                    let y = matrix * DVector::from_column_slice(&c);
                    for i in 0..n {
                        lo[i] = lo[i].min(y[i]);
                        hi[i] = hi[i].max(y[i]);
                    }
                }
                (lo, hi)
            }
            Diffeomorphism::SineWarp { amplitude, terms } => {
                let reach: Vec<f64> =
                    (0..n).map(|i| terms.iter().map(|t| amplitude * t.direction[i].abs()).sum()).collect();
                (
                    lower.iter().zip(&reach).map(|(l, r)| l - r).collect(),
                    upper.iter().zip(&reach).map(|(u, r)| u + r).collect(),
                )
            }
            Diffeomorphism::Composition(maps) => {
                let (mut lo, mut hi) = (lower.to_vec(), upper.to_vec());
                for m in maps {
                    (lo, hi) = m.image_bounding_box(&lo, &hi);
                }
                (lo, hi)
            }
        }
    }
}

/// Jet of `g ∘ f` from the jet of `g` at `f(t)` and the jet of `f` at `t`.
fn compose_jets(outer: &MapJet, inner: &MapJet) -> MapJet {
    let n = inner.value.len();
    let jacobian = &outer.jacobian * &inner.jacobian;
    let hessians = (0..n)
        .map(|k| {
            let mut h = inner.jacobian.transpose() * &outer.hessians[k] * &inner.jacobian;
            for a in 0..n {
                h += outer.jacobian[(k, a)] * &inner.hessians[a];
            }
            h
        })
        .collect();
    MapJet { value: outer.value.clone(), jacobian, hessians }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn warp() -> Diffeomorphism {
        Diffeomorphism::sine_warp(
            0.1,
            vec![WarpTerm { frequency: vec![0.9, 0.6], phase: 0.4, direction: vec![1.0, -0.5] }],
        )
        .unwrap()
    }

    #[test]
    fn identity_jet() {
        let f = Diffeomorphism::identity(3).unwrap();
        let j = f.jet(&[0.1, 0.2, 0.3]);
        assert_eq!(j.jacobian, DMatrix::identity(3, 3));
        assert!(j.hessians.iter().all(|h| h.amax() == 0.0));
        assert_eq!(f.abs_det_jacobian(&[5.0, 1.0, 2.0]), 1.0);
    }

    #[test]
    fn diagonal_determinant() {
        let f = Diffeomorphism::diagonal(&[2.0, 3.0]).unwrap();
        for t in [[0.0, 0.0], [1.0, -4.0], [10.0, 3.3]] {
            assert!((f.abs_det_jacobian(&t) - 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_singular_and_unbounded() {
        assert!(matches!(
            Diffeomorphism::linear(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])),
            Err(Error::SingularMap(_))
        ));
        let too_big = WarpTerm { frequency: vec![3.0, 0.0], phase: 0.0, direction: vec![1.0, 0.0] };
        assert!(matches!(Diffeomorphism::sine_warp(0.2, vec![too_big]), Err(Error::SingularMap(_))));
    }

    #[test]
    fn warp_inverse_round_trip_on_grid() {
        let f = warp();
        for i in 0..10 {
            for j in 0..10 {
                let t = [i as f64 * 0.8, j as f64 * 0.8];
                let back = f.inverse(f.forward(&t).as_slice()).unwrap();
                assert!((back[0] - t[0]).abs() < 1e-10 && (back[1] - t[1]).abs() < 1e-10);
                let y = [t[0] + 0.05, t[1] - 0.3];
                let fwd = f.forward(f.inverse(&y).unwrap().as_slice());
                assert!((fwd[0] - y[0]).abs() < 1e-10 && (fwd[1] - y[1]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jacobian_and_hessians_match_finite_differences() {
        let maps = [
            warp(),
            Diffeomorphism::compose(vec![warp(), Diffeomorphism::rotation_2d(30.0).unwrap(), warp()]).unwrap(),
        ];
        let h = 1e-5;
        for f in &maps {
            for t in [[0.3, 1.7], [4.0, -2.5]] {
                let jet = f.jet(&t);
                for j in 0..2 {
                    let mut tp = t;
                    let mut tm = t;
                    tp[j] += h;
                    tm[j] -= h;
                    let fd = (f.forward(&tp) - f.forward(&tm)) / (2.0 * h);
                    let jp = f.jacobian(&tp);
                    let jm = f.jacobian(&tm);
                    for k in 0..2 {
                        assert!((fd[k] - jet.jacobian[(k, j)]).abs() < 1e-8);
                        for i in 0..2 {
                            let fd2 = (jp[(k, i)] - jm[(k, i)]) / (2.0 * h);
                            assert!((fd2 - jet.hessians[k][(i, j)]).abs() < 1e-8);
                        }
                    }
                }
                assert!(f.check_nonsingular(&t).is_ok());
            }
        }
    }

    #[test]
    fn image_box_contains_image() {
        let f = Diffeomorphism::compose(vec![warp(), Diffeomorphism::rotation_2d(20.0).unwrap()]).unwrap();
        let (lo, hi) = f.image_bounding_box(&[0.0, 0.0], &[8.0, 8.0]);
        for i in 0..=20 {
            for j in 0..=20 {
                let y = f.forward(&[i as f64 * 0.4, j as f64 * 0.4]);
                for k in 0..2 {
                    assert!(y[k] >= lo[k] - 1e-12 && y[k] <= hi[k] + 1e-12);
                }
            }
        }
    }
}
