use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::catalog::{CriticalCatalog, CriticalPoint};
use super::classify::classify_with_eigenvalues;
use super::domain::Domain;
use crate::error::{Error, Result};
use crate::field::{Diffeomorphism, FieldJet, FieldScales, ScalarField};
use crate::linalg::solve;

/// Parameters of the grid-seeded Newton search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Grid nodes per axis.
    pub resolution: Vec<usize>,
    pub max_iterations: usize,
    /// Convergence threshold on `‖∇X‖`.
    pub tol_grad: f64,
    /// Eigenvalues with `|e| ≤ tol_eig` make a point non-Morse.
    pub tol_eig: f64,
    /// Converged points closer than this are the same point.
    pub dedup_radius: f64,
    /// When set, Newton is started only from nodes whose own Newton step
    /// stays within this many grid spacings on every axis. `None` starts
    /// Newton from every node.
    pub seed_screen: Option<f64>,
    /// Longest Newton step, in grid spacings.
    pub max_step: f64,
    /// Repeat the search at twice the resolution and compare counts.
    pub check_refinement: bool,
}

impl SearchConfig {
    /// Defaults for a field over a domain: six nodes per shortest expected
    /// wavelength `2π/k` on each axis, `tol_grad = 1e-10 · sd(∂X)`,
    /// `tol_eig = 1e-8 · sd(H_ii)`, dedup radius `1e-4 · ℓ`.
    pub fn for_field(scales: &FieldScales, domain: &Domain) -> Self {
        let (lo, hi) = domain.seed_extent();
        let resolution = lo
            .iter()
            .zip(&hi)
            .zip(&scales.wavenumber)
            .map(|((l, u), k)| ((6.0 * (u - l) * k / TAU).ceil() as usize).max(4))
            .collect();
        Self {
            resolution,
            max_iterations: 50,
            tol_grad: 1e-10 * scales.gradient,
            tol_eig: 1e-8 * scales.hessian,
            dedup_radius: 1e-4 * scales.length(),
            seed_screen: Some(3.0),
            max_step: 2.0,
            check_refinement: true,
        }
    }

    pub fn with_resolution_scale(mut self, factor: f64) -> Self {
        for m in self.resolution.iter_mut() {
            *m = ((*m as f64 * factor).ceil() as usize).max(2);
        }
        self
    }

    fn refined(&self) -> Self {
        let mut c = self.clone();
        for m in c.resolution.iter_mut() {
            *m *= 2;
        }
        c
    }
}

/// Counters describing what happened to the grid seeds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub grid_nodes: usize,
    pub seeds: usize,
    pub converged: usize,
    pub singular: usize,
    pub stalled: usize,
    pub max_iterations: usize,
    pub escaped: usize,
    pub rejected_location: usize,
}

impl SearchDiagnostics {
    pub(crate) fn absorb(&mut self, other: &SearchDiagnostics) {
        self.grid_nodes += other.grid_nodes;
        self.seeds += other.seeds;
        self.converged += other.converged;
        self.singular += other.singular;
        self.stalled += other.stalled;
        self.max_iterations += other.max_iterations;
        self.escaped += other.escaped;
        self.rejected_location += other.rejected_location;
    }
}

#[derive(Debug, Clone)]
pub enum NewtonOutcome {
    Converged { location: Vec<f64>, jet: FieldJet, iterations: usize },
    /// Hessian numerically singular at an iterate.
    Singular,
    /// No step length reduced `‖∇X‖`.
    Stalled,
    MaxIterations,
    /// An iterate left the search bounds.
    Escaped,
}

/// Damped Newton on `∇X`: step `-H⁻¹∇X`, capped at `max_step`, halved until
/// the gradient norm decreases.
pub fn newton_refine<F: ScalarField + ?Sized>(
    field: &F,
    start: &[f64],
    tol_grad: f64,
    max_iterations: usize,
    max_step: f64,
) -> NewtonOutcome {
    newton_refine_within(field, start, tol_grad, max_iterations, max_step, None)
}

/// As [`newton_refine`], giving up as soon as an iterate leaves the box
/// `bounds = (lower, upper)`.
pub fn newton_refine_within<F: ScalarField + ?Sized>(
    field: &F,
    start: &[f64],
    tol_grad: f64,
    max_iterations: usize,
    max_step: f64,
    bounds: Option<(&[f64], &[f64])>,
) -> NewtonOutcome {
    let outside = |x: &[f64]| match bounds {
        Some((lo, hi)) => x.iter().zip(lo.iter().zip(hi)).any(|(v, (l, h))| v < l || v > h),
        None => false,
    };
    let mut x = start.to_vec();
    let mut jet = field.jet(&x);
    let mut gnorm = jet.gradient.norm();
    for it in 0..=max_iterations {
        if gnorm < tol_grad {
            return NewtonOutcome::Converged { location: x, jet, iterations: it };
        }
        if it == max_iterations {
            break;
        }
        let Some(mut step) = solve(&jet.hessian, &(-&jet.gradient)) else {
            return NewtonOutcome::Singular;
        };
        let len = step.norm();
        if len > max_step {
            step *= max_step / len;
        }
        let mut alpha = 1.0;
        loop {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
            let cj = field.jet(&cand);
            let cn = cj.gradient.norm();
            if cn < gnorm {
                if outside(&cand) {
                    return NewtonOutcome::Escaped;
                }
                x = cand;
                jet = cj;
                gnorm = cn;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-2 {
                return NewtonOutcome::Stalled;
            }
        }
    }
    NewtonOutcome::MaxIterations
}

/// All critical points of `field` in `domain`.
pub fn find_critical_points<F: ScalarField + ?Sized>(
    field: &F,
    domain: &Domain,
    config: &SearchConfig,
) -> Result<CriticalCatalog> {
    find_critical_points_where(field, domain, &|_| true, config)
}

/// As [`find_critical_points`], keeping only points accepted by `accept`
/// (evaluated on the canonical location).
pub fn find_critical_points_where<F: ScalarField + ?Sized>(
    field: &F,
    domain: &Domain,
    accept: &(dyn Fn(&[f64]) -> bool + Sync),
    config: &SearchConfig,
) -> Result<CriticalCatalog> {
    if field.dim() != domain.dim() {
        return Err(Error::DimensionMismatch { expected: domain.dim(), found: field.dim() });
    }
    if config.resolution.len() != domain.dim() || config.resolution.contains(&0) {
        return Err(Error::invalid(format!("bad grid resolution {:?}", config.resolution)));
    }
    let (coarse, mut diagnostics) = search_pass(field, domain, accept, config)?;
    let (points, refinement_stable) = if config.check_refinement {
        let (fine, fine_diag) = search_pass(field, domain, accept, &config.refined())?;
        diagnostics.absorb(&fine_diag);
        let stable = index_counts(&coarse) == index_counts(&fine);
        let mut all = coarse;
        all.extend(fine);
        (dedup(all, domain, config.dedup_radius), Some(stable))
    } else {
        (coarse, None)
    };
    Ok(CriticalCatalog {
        points,
        domain: domain.clone(),
        config: config.clone(),
        refinement_stable,
        diagnostics,
    })
}

/// Critical points of `z` over `f(M)` for a box `M`: searches the bounding
/// box of the image and keeps points whose preimage lies in the counting
/// region of `M`.
pub fn find_critical_points_on_image<F: ScalarField + ?Sized>(
    z: &F,
    f: &Diffeomorphism,
    domain: &Domain,
    config: &SearchConfig,
) -> Result<CriticalCatalog> {
    let Domain::Box { lower, upper, .. } = domain else {
        return Err(Error::invalid("image search needs a box domain"));
    };
    let (lo, hi) = f.image_bounding_box(lower, upper);
    let image_box = Domain::new_box(lo, hi, 0.0)?;
    let accept = |tp: &[f64]| match f.inverse(tp) {
        Ok(t) => domain.contains(t.as_slice()),
        Err(_) => false,
    };
    find_critical_points_where(z, &image_box, &accept, config)
}

fn index_counts(points: &[CriticalPoint]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for p in points {
        *m.entry(p.index).or_insert(0) += 1;
    }
    m
}

fn grid_axes(domain: &Domain, resolution: &[usize]) -> Vec<Vec<f64>> {
    let (lo, hi) = domain.seed_extent();
    lo.iter()
        .zip(&hi)
        .zip(resolution)
        .map(|((l, u), &m)| {
            let h = (u - l) / m as f64;
            match domain {
                Domain::Box { .. } => (0..m).map(|i| l + (i as f64 + 0.5) * h).collect(),
                Domain::Torus { .. } => (0..m).map(|i| l + i as f64 * h).collect(),
            }
        })
        .collect()
}

fn search_pass<F: ScalarField + ?Sized>(
    field: &F,
    domain: &Domain,
    accept: &(dyn Fn(&[f64]) -> bool + Sync),
    config: &SearchConfig,
) -> Result<(Vec<CriticalPoint>, SearchDiagnostics)> {
    let axes = grid_axes(domain, &config.resolution);
    let (lo, hi) = domain.seed_extent();
    let spacing: Vec<f64> =
        lo.iter().zip(&hi).zip(&config.resolution).map(|((l, u), &m)| (u - l) / m as f64).collect();
    let total: usize = config.resolution.iter().product();
    let node = |mut idx: usize| -> Vec<f64> {
        axes.iter()
            .map(|ax| {
                let i = idx % ax.len();
                idx /= ax.len();
                ax[i]
            })
            .collect()
    };

    let seeds: Vec<Vec<f64>> = match config.seed_screen {
        None => (0..total).map(node).collect(),
        Some(radius) => (0..total)
            .into_par_iter()
            .filter_map(|idx| {
                let t = node(idx);
                let jet = field.jet(&t);
                let step = solve(&jet.hessian, &(-&jet.gradient))?;
                step.iter().zip(&spacing).all(|(s, h)| s.abs() <= radius * h).then_some(t)
            })
            .collect(),
    };

    let max_step = config.max_step * spacing.iter().copied().fold(0.0, f64::max);
    // Box iterates that wander more than a step beyond the box cannot end
    // up inside it by any short path, so they are abandoned.
    let bounds = match domain {
        Domain::Box { .. } => {
            Some((lo.iter().map(|l| l - max_step).collect::<Vec<_>>(), hi.iter().map(|h| h + max_step).collect::<Vec<_>>()))
        }
        Domain::Torus { .. } => None,
    };
    let bounds = bounds.as_ref().map(|(l, h)| (l.as_slice(), h.as_slice()));
    let outcomes: Vec<NewtonOutcome> = seeds
        .par_iter()
        .map(|s| newton_refine_within(field, s, config.tol_grad, config.max_iterations, max_step, bounds))
        .collect();

    let mut diag = SearchDiagnostics { grid_nodes: total, seeds: seeds.len(), ..Default::default() };
    let mut found = Vec::new();
    for outcome in outcomes {
        match outcome {
            NewtonOutcome::Converged { mut location, jet, iterations } => {
                diag.converged += 1;
                domain.wrap(&mut location);
                if !domain.contains(&location) || !accept(&location) {
                    diag.rejected_location += 1;
                    continue;
                }
                let (index, eigenvalues) = classify_with_eigenvalues(&jet.hessian, config.tol_eig).map_err(|e| {
                    match e {
                        Error::NearSingularHessian { eigenvalue, tolerance } => {
                            Error::NonMorse { location: location.clone(), eigenvalue, tolerance }
                        }
                        other => other,
                    }
                })?;
                found.push(CriticalPoint {
                    height: jet.value,
                    index,
                    eigenvalues,
                    gradient_residual: jet.gradient.norm(),
                    newton_iterations: iterations,
                    location,
                });
            }
            NewtonOutcome::Singular => diag.singular += 1,
            NewtonOutcome::Stalled => diag.stalled += 1,
            NewtonOutcome::MaxIterations => diag.max_iterations += 1,
            NewtonOutcome::Escaped => diag.escaped += 1,
        }
    }
    Ok((dedup(found, domain, config.dedup_radius), diag))
}

/// Sorts lexicographically by location and drops points within `radius` of
/// an earlier kept point.
fn dedup(mut points: Vec<CriticalPoint>, domain: &Domain, radius: f64) -> Vec<CriticalPoint> {
    points.sort_by(|a, b| {
        a.location
            .iter()
            .zip(&b.location)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<CriticalPoint> = Vec::new();
    for p in points {
        if kept.iter().all(|k| domain.distance(&k.location, &p.location) > radius) {
            kept.push(p);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crit::{count_mu, morse_sum};
    use crate::field::{CovarianceModel, SpectralField};
    use std::f64::consts::SQRT_2;

    fn se(dim: usize) -> CovarianceModel {
        CovarianceModel::squared_exponential(1.0, dim).unwrap()
    }

    #[test]
    fn single_cosine_on_one_period() {
        let omega = 1.3;
        let period = TAU / omega;
        let f = SpectralField::from_waves(&se(1), &[vec![omega]], &[0.4], Some(period)).unwrap();
        let domain = Domain::torus(vec![period]).unwrap();
        let config = SearchConfig::for_field(&f.scales(), &domain);
        let cat = find_critical_points(&f, &domain, &config).unwrap();
        assert_eq!(cat.points.len(), 2);
        assert_eq!(count_mu(&cat, f64::NEG_INFINITY, 1), 1);
        assert_eq!(count_mu(&cat, f64::NEG_INFINITY, 0), 1);
        assert_eq!(count_mu(&cat, 0.0, 1), 1);
        assert_eq!(count_mu(&cat, 0.0, 0), 0);
        for p in &cat.points {
            let expected = if p.index == 1 { SQRT_2 } else { -SQRT_2 };
            assert!((p.height - expected).abs() < 1e-12);
            // Maximum where ωt + φ ≡ 0, minimum where ≡ π.
            let phase = (omega * p.location[0] + 0.4).rem_euclid(TAU);
            let target = if p.index == 1 { 0.0 } else { std::f64::consts::PI };
            let d = (phase - target).abs();
            assert!(d.min(TAU - d) < 1e-9);
        }
        assert_eq!(morse_sum(&cat), 0);
        assert_eq!(cat.refinement_stable, Some(true));
    }

    #[test]
    fn constant_field_is_non_morse() {
        let f = SpectralField::from_waves(&se(2), &[vec![0.0, 0.0]], &[0.2], None).unwrap();
        let domain = Domain::box_with_default_margin(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let mut config = SearchConfig::for_field(&f.scales(), &domain);
        config.seed_screen = None;
        let err = find_critical_points(&f, &domain, &config).unwrap_err();
        assert!(matches!(err, Error::NonMorse { .. }), "{err}");
    }

    #[test]
    fn screened_and_exhaustive_seeding_agree() {
        let f = SpectralField::from_seed(&se(2), 256, 17, None).unwrap();
        let domain = Domain::box_with_default_margin(vec![0.0, 0.0], vec![6.0, 6.0]).unwrap();
        let screened = SearchConfig::for_field(&f.scales(), &domain);
        let mut exhaustive = screened.clone();
        exhaustive.seed_screen = None;
        let a = find_critical_points(&f, &domain, &screened).unwrap();
        let b = find_critical_points(&f, &domain, &exhaustive).unwrap();
        assert_eq!(a.points.len(), b.points.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!(domain.distance(&p.location, &q.location) < 1e-8);
            assert_eq!(p.index, q.index);
        }
    }

    #[test]
    fn worker_count_does_not_change_catalog() {
        let f = SpectralField::from_seed(&se(2), 128, 4, Some(9.0)).unwrap();
        let domain = Domain::torus(vec![9.0, 9.0]).unwrap();
        let config = SearchConfig::for_field(&f.scales(), &domain);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| find_critical_points(&f, &domain, &config).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.points, b.points);
        assert_eq!(morse_sum(&a), 0);
    }
}
