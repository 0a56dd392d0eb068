//! Covariance models, random-wave realizations with exact jets, smooth
//! coordinate maps, and transformed fields `X(t) = Z(f(t))`.

mod covariance;
mod diffeo;
mod spectral;
mod transformed;

pub use covariance::{CovarianceKind, CovarianceModel, SpectralMoments};
pub use diffeo::{Diffeomorphism, MapJet, WarpTerm};
pub use spectral::SpectralField;
pub use transformed::{transform_field, TransformedField};

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Value, gradient and Hessian of a scalar field at a point.
///
/// The Hessian is kept exactly symmetric: producers fill the upper triangle
/// and mirror it.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldJet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl FieldJet {
    pub fn zeros(dim: usize) -> Self {
        Self {
            value: 0.0,
            gradient: DVector::zeros(dim),
            hessian: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }
}

/// Typical magnitudes of a field's derivatives, used to set default
/// tolerances and seeding densities.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldScales {
    /// Standard deviation of a gradient component.
    pub gradient: f64,
    /// Standard deviation of a diagonal Hessian entry.
    pub hessian: f64,
    /// Largest expected angular wavenumber along each coordinate axis.
    pub wavenumber: Vec<f64>,
}

impl FieldScales {
    /// Characteristic length: the inverse of the largest wavenumber, times 3.
    pub fn length(&self) -> f64 {
        3.0 / self.wavenumber.iter().copied().fold(0.0, f64::max)
    }
}

/// A globally defined, smooth scalar field on `R^N` with exact jets.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;

    fn jet(&self, t: &[f64]) -> FieldJet;

    fn value(&self, t: &[f64]) -> f64 {
        self.jet(t).value
    }

    fn scales(&self) -> FieldScales;
}

impl<T: ScalarField + ?Sized> ScalarField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn jet(&self, t: &[f64]) -> FieldJet {
        (**self).jet(t)
    }
    fn value(&self, t: &[f64]) -> f64 {
        (**self).value(t)
    }
    fn scales(&self) -> FieldScales {
        (**self).scales()
    }
}

impl<T: ScalarField + ?Sized> ScalarField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn jet(&self, t: &[f64]) -> FieldJet {
        (**self).jet(t)
    }
    fn value(&self, t: &[f64]) -> f64 {
        (**self).value(t)
    }
    fn scales(&self) -> FieldScales {
        (**self).scales()
    }
}
