use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Diffeomorphism;

/// `{x : ‖diag(1/a) Rᵀ x‖ = 1}` for semi-axes `a` and an orthogonal `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    semi_axes: [f64; 3],
    /// Row-major; columns are the principal directions.
    rotation: [[f64; 3]; 3],
}

impl Ellipsoid {
    pub fn new(semi_axes: [f64; 3]) -> Result<Self> {
        Self::with_rotation(semi_axes, Matrix3::identity())
    }

    pub fn unit_sphere() -> Self {
        Self { semi_axes: [1.0; 3], rotation: identity_rows() }
    }

    /// Ellipsoid whose principal directions are the columns of `rotation`.
    pub fn with_rotation(semi_axes: [f64; 3], rotation: Matrix3<f64>) -> Result<Self> {
        if semi_axes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::invalid(format!("semi-axes must be positive and finite, got {semi_axes:?}")));
        }
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(defect < 1e-10) {
            return Err(Error::invalid(format!("rotation is not orthogonal (‖RᵀR - I‖ = {defect:e})")));
        }
        let mut rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = rotation[(i, j)];
            }
        }
        Ok(Self { semi_axes, rotation: rows })
    }

    pub fn semi_axes(&self) -> [f64; 3] {
        self.semi_axes
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn is_unit_sphere(&self) -> bool {
        self.semi_axes == [1.0; 3] && self.rotation == identity_rows()
    }

    /// The linear map `g` sending the ellipsoid onto the unit sphere.
    pub fn to_sphere_matrix(&self) -> Matrix3<f64> {
        let inv = Matrix3::from_diagonal(&Vector3::new(
            1.0 / self.semi_axes[0],
            1.0 / self.semi_axes[1],
            1.0 / self.semi_axes[2],
        ));
        inv * self.rotation().transpose()
    }

    /// `g⁻¹ = R diag(a)`.
    pub fn from_sphere_matrix(&self) -> Matrix3<f64> {
        self.rotation() * Matrix3::from_diagonal(&Vector3::from(self.semi_axes))
    }

    pub fn to_sphere(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.to_sphere_matrix() * x
    }

    pub fn from_sphere(&self, y: &Vector3<f64>) -> Vector3<f64> {
        self.from_sphere_matrix() * y
    }

    /// `g` as a map of `R³`.
    pub fn linear_map(&self) -> Diffeomorphism {
        let g = self.to_sphere_matrix();
        Diffeomorphism::linear(nalgebra::DMatrix::from_fn(3, 3, |i, j| g[(i, j)]))
            .expect("positive semi-axes give an invertible map")
    }

    /// `‖g x‖ - 1`, zero on the surface.
    pub fn surface_residual(&self, x: &Vector3<f64>) -> f64 {
        self.to_sphere(x).norm() - 1.0
    }

    /// Largest semi-axis.
    pub fn max_semi_axis(&self) -> f64 {
        self.semi_axes.iter().copied().fold(0.0, f64::max)
    }
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}
