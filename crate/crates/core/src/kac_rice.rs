//! Field-free Monte Carlo oracles built on the joint Gaussian law of the
//! value and Hessian at a single point.
//!
//! For a stationary field the gradient is independent of `(X, ∇²X)`, so the
//! law of `(X, H)` at a critical point is the plain marginal law, reweighted
//! by `|det H|`. The estimators here sample that law directly and never build
//! a field, which makes them independent checks on grid-based counting.

use std::io::Write;

use nalgebra::{DMatrix, Matrix3};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::crit::Domain;
use crate::error::{Error, Result};
use crate::field::SpectralMoments;
use crate::rng::substream;

/// Samples per substream. Fixed so results do not depend on the worker count.
const CHUNK: usize = 8192;

/// Below this many effective samples a ratio estimate is flagged unreliable.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 10.0;

/// One draw of `(X, H)`; only the leading `dim × dim` block of `h` is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueHessian {
    pub dim: usize,
    pub x: f64,
    pub h: [[f64; 3]; 3],
}

impl ValueHessian {
    pub fn hessian(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.h[i][j])
    }

    /// Ascending eigenvalues of the Hessian block.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let h = &self.h;
        let mut e = [0.0; 3];
        match self.dim {
            1 => e[0] = h[0][0],
            2 => {
                let mid = 0.5 * (h[0][0] + h[1][1]);
                let rad = (0.5 * (h[0][0] - h[1][1])).hypot(h[0][1]);
                e[0] = mid - rad;
                e[1] = mid + rad;
            }
            _ => {
                let m = Matrix3::new(
                    h[0][0], h[0][1], h[0][2], h[1][0], h[1][1], h[1][2], h[2][0], h[2][1], h[2][2],
                );
                let ev = m.symmetric_eigenvalues();
                e = [ev[0], ev[1], ev[2]];
                e.sort_by(f64::total_cmp);
            }
        }
        e
    }

    /// `(index, |det H|)`, both read off the same eigenvalues.
    pub fn index_and_abs_det(&self) -> (usize, f64) {
        let e = self.eigenvalues();
        let mut index = 0;
        let mut det = 1.0;
        for &v in &e[..self.dim] {
            if v < 0.0 {
                index += 1;
            }
            det *= v;
        }
        (index, det.abs())
    }

    /// `(-x, -H)`; maps a point of index `i` to one of index `N - i`.
    pub fn negated(&self) -> Self {
        let mut h = self.h;
        for row in &mut h {
            for v in row {
                *v = -*v;
            }
        }
        Self { dim: self.dim, x: -self.x, h }
    }
}

/// Draws `(X, H)` from the joint law fixed by a set of spectral moments.
///
/// Given `x`, the diagonal is `a x + sqrt(2b) g + c·mean(g)` with `g` i.i.d.
/// standard normal and `c` chosen so that `Cov(H_ii, H_jj | x) = b - a²`;
/// off-diagonal entries are independent `N(0, b)`.
#[derive(Debug, Clone, Copy)]
pub struct ValueHessianSampler {
    moments: SpectralMoments,
    diag_scale: f64,
    shared_scale: f64,
    off_scale: f64,
}

impl ValueHessianSampler {
    pub fn new(moments: SpectralMoments) -> Result<Self> {
        let SpectralMoments { dim, a, b, .. } = moments;
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        let n = dim as f64;
        let s = 2.0 * b + n * (b - a * a);
        if !(b > 0.0) || s < -1e-12 * b {
            return Err(Error::InadmissibleMoments(format!(
                "joint covariance of (X, H) is indefinite for a = {a}, b = {b}, N = {dim}"
            )));
        }
        let diag_scale = (2.0 * b).sqrt();
        Ok(Self { moments, diag_scale, shared_scale: s.max(0.0).sqrt() - diag_scale, off_scale: b.sqrt() })
    }

    pub fn moments(&self) -> &SpectralMoments {
        &self.moments
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ValueHessian {
        let dim = self.moments.dim;
        let x: f64 = rng.sample(StandardNormal);
        let mut g = [0.0; 3];
        for gi in &mut g[..dim] {
            *gi = rng.sample(StandardNormal);
        }
        let gbar = g[..dim].iter().sum::<f64>() / dim as f64;
        let mut h = [[0.0; 3]; 3];
        for i in 0..dim {
            h[i][i] = self.moments.a * x + self.diag_scale * g[i] + self.shared_scale * gbar;
        }
        for i in 0..dim {
            for j in i + 1..dim {
                let v = self.off_scale * rng.sample::<f64, _>(StandardNormal);
                h[i][j] = v;
                h[j][i] = v;
            }
        }
        ValueHessian { dim, x, h }
    }
}

/// One draw of `(x, H)` from the law implied by `moments`.
pub fn sample_value_hessian<R: Rng + ?Sized>(
    moments: &SpectralMoments,
    rng: &mut R,
) -> Result<(f64, DMatrix<f64>)> {
    let s = ValueHessianSampler::new(*moments)?.sample(rng);
    Ok((s.x, s.hessian()))
}

/// Per-index sums for one block of samples.
#[derive(Debug, Clone)]
struct Sums {
    /// `[index]`: `Σ w`, `Σ w²` with `w = |det H|·1{index}`.
    w: Vec<f64>,
    w2: Vec<f64>,
    /// `[index][u]`: the same sums restricted to `x ≥ u`.
    wu: Vec<Vec<f64>>,
    w2u: Vec<Vec<f64>>,
}

impl Sums {
    fn new(dim: usize, nu: usize) -> Self {
        Self {
            w: vec![0.0; dim + 1],
            w2: vec![0.0; dim + 1],
            wu: vec![vec![0.0; nu]; dim + 1],
            w2u: vec![vec![0.0; nu]; dim + 1],
        }
    }

    fn add(&mut self, other: &Sums) {
        for i in 0..self.w.len() {
            self.w[i] += other.w[i];
            self.w2[i] += other.w2[i];
            for k in 0..self.wu[i].len() {
                self.wu[i][k] += other.wu[i][k];
                self.w2u[i][k] += other.w2u[i][k];
            }
        }
    }
}

/// Accumulates sums over `n` samples split into fixed substreams of
/// `master_seed`, combined in substream order.
fn accumulate(sampler: &ValueHessianSampler, u_grid: &[f64], n: usize, master_seed: u64, negate: bool) -> Sums {
    let dim = sampler.moments.dim;
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<Sums> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(master_seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            let mut s = Sums::new(dim, u_grid.len());
            for _ in 0..len {
                let mut d = sampler.sample(&mut rng);
                if negate {
                    d = d.negated();
                }
                let (i, w) = d.index_and_abs_det();
                let w2 = w * w;
                s.w[i] += w;
                s.w2[i] += w2;
                for (k, &u) in u_grid.iter().enumerate() {
                    if d.x >= u {
                        s.wu[i][k] += w;
                        s.w2u[i][k] += w2;
                    }
                }
            }
            s
        })
        .collect();
    let mut total = Sums::new(dim, u_grid.len());
    for p in &partial {
        total.add(p);
    }
    total
}

fn check_grid(u_grid: &[f64]) -> Result<()> {
    if u_grid.iter().any(|u| u.is_nan()) {
        return Err(Error::invalid("threshold grid contains NaN"));
    }
    if u_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("threshold grid must be non-decreasing"));
    }
    Ok(())
}

/// Monte Carlo estimate of `P(height ≥ u)` for critical points of one index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeightDistEstimate {
    pub index: usize,
    pub u_grid: Vec<f64>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub n: usize,
    /// `(Σw)² / Σw²` for the denominator weights.
    pub effective_samples: f64,
    /// False when `effective_samples` is below [`MIN_EFFECTIVE_SAMPLES`];
    /// the estimates are then not meaningful.
    pub reliable: bool,
}

fn height_dist_from_sums(sums: &Sums, index: usize, u_grid: &[f64], n: usize) -> HeightDistEstimate {
    let den = sums.w[index];
    let den2 = sums.w2[index];
    let effective_samples = if den2 > 0.0 { den * den / den2 } else { 0.0 };
    let nf = n as f64;
    let mut estimates = Vec::with_capacity(u_grid.len());
    let mut std_errors = Vec::with_capacity(u_grid.len());
    for k in 0..u_grid.len() {
        let num = sums.wu[index][k];
        if den <= 0.0 {
            estimates.push(f64::NAN);
            std_errors.push(f64::NAN);
            continue;
        }
        let r = (num / den).clamp(0.0, 1.0);
        // Linearized residual y - r w with y = w·1{x ≥ u}: Σy² = Σyw = w2u.
        let num2 = sums.w2u[index][k];
        let resid = (num2 * (1.0 - 2.0 * r) + r * r * den2).max(0.0);
        let var = resid / (nf - 1.0).max(1.0);
        let wbar = den / nf;
        estimates.push(r);
        std_errors.push((var / nf).sqrt() / wbar);
    }
    HeightDistEstimate {
        index,
        u_grid: u_grid.to_vec(),
        estimates,
        std_errors,
        n,
        effective_samples,
        reliable: effective_samples >= MIN_EFFECTIVE_SAMPLES,
    }
}

/// Ratio estimator of the height distribution of index-`i` critical points,
/// `E[|det H| 1{x ≥ u, index = i}] / E[|det H| 1{index = i}]`, on a
/// non-decreasing threshold grid. All thresholds share one sample, so the
/// curve is non-increasing exactly.
pub fn estimate_height_dist<R: RngCore + ?Sized>(
    moments: &SpectralMoments,
    i: usize,
    u_grid: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<HeightDistEstimate> {
    if i > moments.dim {
        return Err(Error::invalid(format!("index {i} exceeds dimension {}", moments.dim)));
    }
    let mut all = estimate_height_dist_all(moments, u_grid, n, rng)?;
    Ok(all.swap_remove(i))
}

/// [`estimate_height_dist`] for every index `0..=N` from one shared sample.
pub fn estimate_height_dist_all<R: RngCore + ?Sized>(
    moments: &SpectralMoments,
    u_grid: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<HeightDistEstimate>> {
    height_dist_all_seeded(moments, u_grid, n, rng.next_u64(), false)
}

fn height_dist_all_seeded(
    moments: &SpectralMoments,
    u_grid: &[f64],
    n: usize,
    seed: u64,
    negate: bool,
) -> Result<Vec<HeightDistEstimate>> {
    check_grid(u_grid)?;
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let sampler = ValueHessianSampler::new(*moments)?;
    let sums = accumulate(&sampler, u_grid, n, seed, negate);
    Ok((0..=moments.dim).map(|i| height_dist_from_sums(&sums, i, u_grid, n)).collect())
}

/// Expected number of index-`i` critical points with height `≥ u` per unit
/// volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityEstimate {
    pub index: usize,
    #[serde(serialize_with = "serialize_threshold")]
    pub u: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
}

impl DensityEstimate {
    pub fn scaled(&self, factor: f64) -> Self {
        Self { estimate: self.estimate * factor, std_error: self.std_error * factor.abs(), ..*self }
    }
}

/// Stationary Kac–Rice density
/// `(2πλ)^{-N/2} E[|det H| 1{x ≥ u, index = i}]`.
pub fn expected_count_density<R: RngCore + ?Sized>(
    moments: &SpectralMoments,
    u: f64,
    i: usize,
    n: usize,
    rng: &mut R,
) -> Result<DensityEstimate> {
    if i > moments.dim {
        return Err(Error::invalid(format!("index {i} exceeds dimension {}", moments.dim)));
    }
    let table = expected_count_densities(moments, &[u], n, rng)?;
    Ok(table[i][0])
}

/// Densities for every index and every threshold of a non-decreasing grid,
/// from one shared sample; `result[i][k]` is index `i` at `u_grid[k]`.
pub fn expected_count_densities<R: RngCore + ?Sized>(
    moments: &SpectralMoments,
    u_grid: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<DensityEstimate>>> {
    check_grid(u_grid)?;
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let sampler = ValueHessianSampler::new(*moments)?;
    let sums = accumulate(&sampler, u_grid, n, rng.next_u64(), false);
    let norm = (2.0 * std::f64::consts::PI * moments.lambda).powf(-0.5 * moments.dim as f64);
    let nf = n as f64;
    Ok((0..=moments.dim)
        .map(|i| {
            u_grid
                .iter()
                .enumerate()
                .map(|(k, &u)| {
                    let s = sums.wu[i][k];
                    let s2 = sums.w2u[i][k];
                    let mean = s / nf;
                    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
                    DensityEstimate {
                        index: i,
                        u,
                        estimate: norm * mean,
                        std_error: norm * (var / nf).sqrt(),
                        n,
                    }
                })
                .collect()
        })
        .collect())
}

/// Predicted `E[μ_i(D, u)]` for `X(t) = Z(At)`: `|det A| · Vol(D) · density`.
///
/// `Vol(D)` is the domain's counting volume, i.e. the region in which the
/// critical-point search reports points.
pub fn predicted_aniso_count<R: RngCore + ?Sized>(
    moments: &SpectralMoments,
    a: &DMatrix<f64>,
    domain: &Domain,
    u: f64,
    i: usize,
    n: usize,
    rng: &mut R,
) -> Result<DensityEstimate> {
    let dim = moments.dim;
    if a.nrows() != dim || a.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: a.nrows() });
    }
    if domain.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: domain.dim() });
    }
    let det = a.determinant();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if !(det.abs() > 1e-12 * scale.powi(dim as i32)) {
        return Err(Error::SingularMap(format!("|det A| = {:e}", det.abs())));
    }
    let density = expected_count_density(moments, u, i, n, rng)?;
    Ok(density.scaled(det.abs() * domain.counting_volume()))
}

/// `"-inf"`, `"inf"` or the shortest round-trip decimal form.
pub fn threshold_label(u: f64) -> String {
    if u == f64::NEG_INFINITY {
        "-inf".into()
    } else if u == f64::INFINITY {
        "inf".into()
    } else {
        format!("{u:?}")
    }
}

fn serialize_threshold<S: serde::Serializer>(u: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&threshold_label(*u))
}

/// Self-describing record of one oracle evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub moments: SpectralMoments,
    pub i: usize,
    #[serde(serialize_with = "serialize_threshold")]
    pub u: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
    pub seed: u64,
}

impl OracleSummary {
    pub fn new(moments: SpectralMoments, density: &DensityEstimate, seed: u64) -> Self {
        Self {
            moments,
            i: density.index,
            u: density.u,
            estimate: density.estimate,
            std_error: density.std_error,
            n: density.n,
            seed,
        }
    }
}

/// Writes height-distribution curves as
/// `index,u,estimate,std_error,n,effective_samples,reliable`.
pub fn write_height_dist_csv<W: Write>(out: &mut W, curves: &[HeightDistEstimate]) -> std::io::Result<()> {
    writeln!(out, "index,u,estimate,std_error,n,effective_samples,reliable")?;
    for c in curves {
        for k in 0..c.u_grid.len() {
            writeln!(
                out,
                "{},{},{:.17e},{:.17e},{},{:.6e},{}",
                c.index,
                threshold_label(c.u_grid[k]),
                c.estimates[k],
                c.std_errors[k],
                c.n,
                c.effective_samples,
                c.reliable
            )?;
        }
    }
    Ok(())
}
