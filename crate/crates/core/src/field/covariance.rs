use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    /// `ρ(s) = exp(-s / (2ℓ²))`, Gaussian spectral density.
    SquaredExponential,
    /// Spectral density uniform on the ball of radius `1/ℓ`.
    BandLimited,
}

impl CovarianceKind {
    pub fn name(self) -> &'static str {
        match self {
            CovarianceKind::SquaredExponential => "squared-exponential",
            CovarianceKind::BandLimited => "band-limited",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "squared-exponential" => Some(CovarianceKind::SquaredExponential),
            "band-limited" => Some(CovarianceKind::BandLimited),
            _ => None,
        }
    }
}

/// Unit-variance isotropic covariance `E[Z(t)Z(s)] = ρ(‖t - s‖²)` on `R^N`,
/// `N ∈ {1, 2, 3}`, together with a sampler for its spectral measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    kind: CovarianceKind,
    length_scale: f64,
    dim: usize,
}

impl CovarianceModel {
    pub fn new(kind: CovarianceKind, length_scale: f64, dim: usize) -> Result<Self> {
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "length scale must be positive and finite, got {length_scale}"
            )));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        Ok(Self { kind, length_scale, dim })
    }

    pub fn squared_exponential(length_scale: f64, dim: usize) -> Result<Self> {
        Self::new(CovarianceKind::SquaredExponential, length_scale, dim)
    }

    pub fn band_limited(length_scale: f64, dim: usize) -> Result<Self> {
        Self::new(CovarianceKind::BandLimited, length_scale, dim)
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `ρ(s)` as a function of the squared distance `s ≥ 0`.
    pub fn rho(&self, s: f64) -> f64 {
        let l = self.length_scale;
        match self.kind {
            CovarianceKind::SquaredExponential => (-s / (2.0 * l * l)).exp(),
            CovarianceKind::BandLimited => ball_characteristic(self.dim, s.max(0.0).sqrt() / l),
        }
    }

    /// Covariance at lag `h`.
    pub fn covariance(&self, h: &[f64]) -> f64 {
        self.rho(h.iter().map(|x| x * x).sum())
    }

    /// `ρ'(0)`.
    pub fn rho_prime_zero(&self) -> f64 {
        let l2 = self.length_scale * self.length_scale;
        match self.kind {
            CovarianceKind::SquaredExponential => -1.0 / (2.0 * l2),
            CovarianceKind::BandLimited => {
                let n = self.dim as f64;
                -1.0 / (2.0 * (n + 2.0) * l2)
            }
        }
    }

    /// `ρ''(0)`.
    pub fn rho_second_zero(&self) -> f64 {
        let l4 = self.length_scale.powi(4);
        match self.kind {
            CovarianceKind::SquaredExponential => 1.0 / (4.0 * l4),
            CovarianceKind::BandLimited => {
                let n = self.dim as f64;
                1.0 / (4.0 * (n + 2.0) * (n + 4.0) * l4)
            }
        }
    }

    /// Draws an angular frequency from the spectral measure.
    pub fn sample_frequency<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        let mut w = [0.0; 3];
        match self.kind {
            CovarianceKind::SquaredExponential => {
                for wi in w.iter_mut().take(self.dim) {
                    let z: f64 = StandardNormal.sample(rng);
                    *wi = z / self.length_scale;
                }
            }
            CovarianceKind::BandLimited => {
                let mut norm2 = 0.0;
                while norm2 == 0.0 {
                    norm2 = 0.0;
                    for wi in w.iter_mut().take(self.dim) {
                        let z: f64 = StandardNormal.sample(rng);
                        *wi = z;
                        norm2 += z * z;
                    }
                }
                let u: f64 = rng.random();
                let radius = u.powf(1.0 / self.dim as f64) / self.length_scale;
                let scale = radius / norm2.sqrt();
                for wi in w.iter_mut().take(self.dim) {
                    *wi *= scale;
                }
            }
        }
        w
    }

    /// Moments of the joint law of value, gradient and Hessian at a point.
    pub fn spectral_moments(&self) -> Result<SpectralMoments> {
        SpectralMoments::new(
            self.dim,
            -2.0 * self.rho_prime_zero(),
            2.0 * self.rho_prime_zero(),
            4.0 * self.rho_second_zero(),
        )
    }
}

/// Characteristic function of the uniform law on the unit ball of `R^n`,
/// evaluated at radius `x`.
fn ball_characteristic(n: usize, x: f64) -> f64 {
    if x < 0.2 {
        // Γ(ν+1) Σ_k (-x²/4)^k / (k! Γ(k+ν+1)), ν = n/2
        let nu = n as f64 / 2.0;
        let q = -x * x / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 0..12 {
            let k = k as f64;
            term *= q / ((k + 1.0) * (k + nu + 1.0));
            sum += term;
        }
        return sum;
    }
    match n {
        1 => x.sin() / x,
        3 => 3.0 * (x.sin() - x * x.cos()) / (x * x * x),
        _ => {
            // 2 J1(x)/x = (2/π) ∫_0^π cos(x cos θ) sin²θ dθ; the integrand is
            // smooth and periodic, so the trapezoid rule converges geometrically.
            let m = 64 + 4 * x.ceil() as usize;
            let h = PI / m as f64;
            let sum: f64 = (1..m)
                .map(|k| {
                    let th = k as f64 * h;
                    (x * th.cos()).cos() * th.sin().powi(2)
                })
                .sum();
            2.0 / PI * sum * h
        }
    }
}

/// Parameters of the joint Gaussian law of `(X, ∇X, ∇²X)` at a point of a
/// unit-variance stationary isotropic field on `R^N`:
///
/// * `Var X = 1`, `Cov(∇X) = λ I`, `∇X` independent of `(X, ∇²X)`;
/// * `Cov(X, H_ij) = a δ_ij`;
/// * `Cov(H_ij, H_kl) = b (δ_ij δ_kl + δ_ik δ_jl + δ_il δ_jk)`.
///
/// With `ρ` the covariance profile: `λ = -2ρ'(0)`, `a = 2ρ'(0)`,
/// `b = 4ρ''(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralMoments {
    pub dim: usize,
    pub sigma2: f64,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
}

impl SpectralMoments {
    /// Validates that the implied covariance of `(X, upper triangle of H)` is
    /// positive semidefinite. Its eigenvalues are `b` (off-diagonal block),
    /// `2b` on the trace-free diagonal directions, and the spectrum of the 2×2
    /// block of `X` and the normalized trace, which is PSD iff
    /// `(N + 2) b ≥ N a²`.
    pub fn new(dim: usize, lambda: f64, a: f64, b: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InadmissibleMoments(format!("gradient variance {lambda} must be positive")));
        }
        if !(b > 0.0 && b.is_finite()) || !a.is_finite() {
            return Err(Error::InadmissibleMoments(format!("Hessian moment b = {b} must be positive")));
        }
        let n = dim as f64;
        let slack = (n + 2.0) * b - n * a * a;
        if slack < -1e-12 * (n + 2.0) * b {
            return Err(Error::InadmissibleMoments(format!(
                "(N+2)b - N a² = {slack:e} < 0 for N = {dim}, a = {a}, b = {b}"
            )));
        }
        Ok(Self { dim, sigma2: 1.0, lambda, a, b })
    }

    /// `Cov(H_ij, H_kl)`.
    pub fn hessian_covariance(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let d = |p: usize, q: usize| if p == q { 1.0 } else { 0.0 };
        self.b * (d(i, j) * d(k, l) + d(i, k) * d(j, l) + d(i, l) * d(j, k))
    }

    /// `Cov(X, H_ij)`.
    pub fn value_hessian_covariance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.a
        } else {
            0.0
        }
    }

    /// Standard deviation of a diagonal Hessian entry, `sqrt(3b)`.
    pub fn hessian_scale(&self) -> f64 {
        (3.0 * self.b).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_rho_derivs(m: &CovarianceModel) -> (f64, f64) {
        // Central differences of ρ(s) around s = 0 using the even extension
        // ρ(-s) is not available, so use one-sided high-order stencils on s.
        let h = 1e-3;
        let r = |k: f64| m.rho(k * h);
        let d1 = (-25.0 * r(0.0) + 48.0 * r(1.0) - 36.0 * r(2.0) + 16.0 * r(3.0) - 3.0 * r(4.0)) / (12.0 * h);
        let d2 = (35.0 * r(0.0) - 104.0 * r(1.0) + 114.0 * r(2.0) - 56.0 * r(3.0) + 11.0 * r(4.0)) / (12.0 * h * h);
        (d1, d2)
    }

    #[test]
    fn squared_exponential_derivatives() {
        let m = CovarianceModel::squared_exponential(1.0, 1).unwrap();
        assert_eq!(m.rho_prime_zero(), -0.5);
        assert_eq!(m.rho_second_zero(), 0.25);
        let m = CovarianceModel::squared_exponential(2.0, 2).unwrap();
        assert_eq!(m.rho_prime_zero(), -0.125);
        assert_eq!(m.rho(0.0), 1.0);
    }

    #[test]
    fn band_limited_first_derivative_matches_quadrature_and_fd() {
        // Second moment of Uniform[-1, 1] by midpoint quadrature.
        let n = 200_000;
        let second: f64 = (0..n)
            .map(|k| {
                let w = -1.0 + (k as f64 + 0.5) * 2.0 / n as f64;
                w * w * 0.5 * (2.0 / n as f64)
            })
            .sum();
        let m = CovarianceModel::band_limited(1.0, 1).unwrap();
        assert!((m.rho_prime_zero() + 0.5 * second).abs() < 1e-9);
        for dim in 1..=3 {
            let m = CovarianceModel::band_limited(1.3, dim).unwrap();
            let (d1, d2) = fd_rho_derivs(&m);
            assert!((d1 - m.rho_prime_zero()).abs() < 1e-8, "dim {dim}: {d1}");
            assert!((d2 - m.rho_second_zero()).abs() < 1e-4, "dim {dim}: {d2}");
        }
    }

    #[test]
    fn band_limited_profile_is_continuous_across_branches() {
        for dim in 1..=3 {
            let m = CovarianceModel::band_limited(1.0, dim).unwrap();
            let lo = m.rho(0.2f64.powi(2) * (1.0 - 1e-9));
            let hi = m.rho(0.2f64.powi(2) * (1.0 + 1e-9));
            assert!((lo - hi).abs() < 1e-9, "dim {dim}");
        }
        // 2 J1(1)/1 = 0.880101171...
        let m = CovarianceModel::band_limited(1.0, 2).unwrap();
        assert!((m.rho(1.0) - 2.0 * 0.440_050_585_744_933_5).abs() < 1e-12);
    }

    #[test]
    fn spectral_moments_match_covariance_derivatives() {
        // C(h) = exp(-h²/2): C''(0) = -1, C''''(0) = 3, by finite differences.
        let c = |h: f64| (-h * h / 2.0).exp();
        let h = 1e-2;
        let c2 = (c(h) - 2.0 * c(0.0) + c(-h)) / (h * h);
        let c4 = (c(2.0 * h) - 4.0 * c(h) + 6.0 * c(0.0) - 4.0 * c(-h) + c(-2.0 * h)) / h.powi(4);
        let m = CovarianceModel::squared_exponential(1.0, 1).unwrap().spectral_moments().unwrap();
        assert!((m.lambda + c2).abs() < 1e-4);
        assert!((m.hessian_covariance(0, 0, 0, 0) - c4).abs() < 1e-3);
        assert_eq!(m.hessian_covariance(0, 0, 0, 0), 3.0);

        // Mixed fourth derivatives of C(h1, h2) = exp(-(h1²+h2²)/2):
        // ∂⁴/∂h1²∂h2² C(0) = 1.
        let c2d = |x: f64, y: f64| (-(x * x + y * y) / 2.0).exp();
        let d2x = |y: f64| (c2d(h, y) - 2.0 * c2d(0.0, y) + c2d(-h, y)) / (h * h);
        let mixed = (d2x(h) - 2.0 * d2x(0.0) + d2x(-h)) / (h * h);
        let m2 = CovarianceModel::squared_exponential(1.0, 2).unwrap().spectral_moments().unwrap();
        assert!((m2.hessian_covariance(0, 0, 1, 1) - mixed).abs() < 1e-3);
        assert_eq!(m2.hessian_covariance(0, 0, 1, 1), 1.0);
        assert_eq!(m2.hessian_covariance(0, 1, 0, 1), 1.0);
        assert_eq!(m2.value_hessian_covariance(0, 1), 0.0);
    }

    #[test]
    fn admissibility() {
        assert!(CovarianceModel::new(CovarianceKind::SquaredExponential, 0.0, 2).is_err());
        assert!(CovarianceModel::new(CovarianceKind::SquaredExponential, 1.0, 4).is_err());
        for dim in 1..=3 {
            for kind in [CovarianceKind::SquaredExponential, CovarianceKind::BandLimited] {
                let m = CovarianceModel::new(kind, 0.7, dim).unwrap();
                assert!(m.rho_prime_zero() < 0.0);
                assert!(m.spectral_moments().is_ok());
            }
        }
        // a² far above b violates the joint law.
        assert!(SpectralMoments::new(2, 1.0, -3.0, 1.0).is_err());
    }

    #[test]
    fn band_limited_frequencies_stay_in_ball() {
        let m = CovarianceModel::band_limited(0.5, 3).unwrap();
        let mut rng = crate::rng::substream(1, 0);
        for _ in 0..1000 {
            let w = m.sample_frequency(&mut rng);
            assert!(crate::linalg::norm(&w) <= 2.0 + 1e-12);
        }
    }
}
