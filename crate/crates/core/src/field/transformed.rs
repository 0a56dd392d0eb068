use nalgebra::DMatrix;

use super::{Diffeomorphism, FieldJet, FieldScales, ScalarField};
use crate::error::{Error, Result};

/// `X(t) = Z(f(t))` for a base field `Z` and a diffeomorphism `f`.
///
/// Jets follow the chain rule exactly:
///
/// * `∇X(t) = B(t)ᵀ ∇Z(f(t))`
/// * `∇²X(t) = B(t)ᵀ ∇²Z(f(t)) B(t) + Σ_k ∂_k Z(f(t)) ∇²f_k(t)`
///
/// The second Hessian term vanishes for linear maps and at critical points.
#[derive(Debug, Clone)]
pub struct TransformedField<F> {
    base: F,
    map: Diffeomorphism,
}

pub fn transform_field<F: ScalarField>(base: F, map: Diffeomorphism) -> Result<TransformedField<F>> {
    if base.dim() != map.dim() {
        return Err(Error::DimensionMismatch { expected: base.dim(), found: map.dim() });
    }
    Ok(TransformedField { base, map })
}

impl<F: ScalarField> TransformedField<F> {
    pub fn base(&self) -> &F {
        &self.base
    }

    pub fn map(&self) -> &Diffeomorphism {
        &self.map
    }

    /// Full jet together with its two Hessian parts `(BᵀHB, Σ_k ∂_kZ ∇²f_k)`.
    pub fn jet_parts(&self, t: &[f64]) -> (FieldJet, DMatrix<f64>, DMatrix<f64>) {
        let mj = self.map.jet(t);
        let z = self.base.jet(mj.value.as_slice());
        let bt = mj.jacobian.transpose();
        let gradient = &bt * &z.gradient;
        let congruent = &bt * &z.hessian * &mj.jacobian;
        let n = t.len();
        let mut curvature = DMatrix::zeros(n, n);
        for (k, hk) in mj.hessians.iter().enumerate() {
            curvature += z.gradient[k] * hk;
        }
        let mut hessian = &congruent + &curvature;
        crate::linalg::symmetrize_from_upper(&mut hessian);
        (FieldJet { value: z.value, gradient, hessian }, congruent, curvature)
    }

    /// `B(t)ᵀ ∇²Z(f(t)) B(t)`, which equals the full Hessian at critical points.
    pub fn congruent_hessian(&self, t: &[f64]) -> DMatrix<f64> {
        self.jet_parts(t).1
    }
}

impl<F: ScalarField> ScalarField for TransformedField<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn jet(&self, t: &[f64]) -> FieldJet {
        if self.map.is_linear() {
            let mj = self.map.jet(t);
            let z = self.base.jet(mj.value.as_slice());
            let bt = mj.jacobian.transpose();
            let mut hessian = &bt * &z.hessian * &mj.jacobian;
            crate::linalg::symmetrize_from_upper(&mut hessian);
            return FieldJet { value: z.value, gradient: &bt * &z.gradient, hessian };
        }
        self.jet_parts(t).0
    }

    fn value(&self, t: &[f64]) -> f64 {
        self.base.value(self.map.forward(t).as_slice())
    }

    fn scales(&self) -> FieldScales {
        let base = self.base.scales();
        let stretch = self.map.column_stretch_bound();
        let max_stretch = stretch.iter().copied().fold(0.0, f64::max);
        let base_k = base.wavenumber.iter().copied().fold(0.0, f64::max);
        FieldScales {
            gradient: base.gradient * max_stretch,
            hessian: base.hessian * max_stretch * max_stretch,
            wavenumber: stretch.iter().map(|s| base_k * s).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CovarianceModel, SpectralField, WarpTerm};

    fn base() -> SpectralField {
        SpectralField::from_seed(&CovarianceModel::squared_exponential(1.0, 2).unwrap(), 64, 3, None).unwrap()
    }

    #[test]
    fn identity_transform_reproduces_base() {
        let z = base();
        let x = transform_field(&z, Diffeomorphism::identity(2).unwrap()).unwrap();
        for t in [[0.0, 0.0], [1.5, -2.0], [3.3, 7.1]] {
            assert_eq!(x.jet(&t), z.jet(&t));
        }
    }

    #[test]
    fn linear_transform_has_no_curvature_term() {
        let z = base();
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, -0.2, 0.5]);
        let x = transform_field(&z, Diffeomorphism::linear(a.clone()).unwrap()).unwrap();
        let t = [0.7, 1.9];
        let (_, congruent, curvature) = x.jet_parts(&t);
        assert_eq!(curvature.amax(), 0.0);
        let zt = z.jet((&a * nalgebra::DVector::from_column_slice(&t)).as_slice());
        let expected = a.transpose() * &zt.hessian * &a;
        assert!((x.jet(&t).hessian - expected).amax() < 1e-14);
        assert!((congruent - x.jet(&t).hessian).amax() < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        let z = base();
        assert!(matches!(
            transform_field(&z, Diffeomorphism::identity(3).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn chain_rule_identities() {
        let z = base();
        let f = Diffeomorphism::sine_warp(
            0.1,
            vec![WarpTerm { frequency: vec![0.8, -0.7], phase: 1.0, direction: vec![0.6, 1.0] }],
        )
        .unwrap();
        let x = transform_field(&z, f.clone()).unwrap();
        for t in [[0.2, 0.4], [5.0, 3.0], [-1.0, 2.2]] {
            let (jet, congruent, curvature) = x.jet_parts(&t);
            let mj = f.jet(&t);
            let zj = z.jet(mj.value.as_slice());
            let g = mj.jacobian.transpose() * &zj.gradient;
            assert!((&jet.gradient - g).amax() <= 1e-12);
            let scale = jet.hessian.amax().max(1.0);
            assert!((&jet.hessian - &congruent - &curvature).amax() <= 1e-12 * scale);
        }
    }
}
