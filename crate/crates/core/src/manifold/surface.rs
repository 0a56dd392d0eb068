use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chart::{ChartAtlas, DEFAULT_OVERLAP};
use super::ellipsoid::Ellipsoid;
use crate::crit::{classify_with_eigenvalues, match_points, newton_refine_within, MatchReport, NewtonOutcome, PointRecord};
use crate::crit::SearchDiagnostics;
use crate::error::{Error, Result};
use crate::field::{transform_field, FieldJet, FieldScales, ScalarField, TransformedField};
use crate::linalg::{solve, symmetrize_from_upper};

/// An ambient field on `R³` read on an ellipsoid (possibly the unit sphere).
#[derive(Debug, Clone)]
pub struct SurfaceField<F> {
    ambient: F,
    surface: Ellipsoid,
    atlas: ChartAtlas,
}

/// Restriction of a three-dimensional field to the unit sphere.
pub fn sphere_field<F: ScalarField>(realization: F) -> Result<SurfaceField<F>> {
    if realization.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: realization.dim() });
    }
    let surface = Ellipsoid::unit_sphere();
    let atlas = ChartAtlas::new(surface.to_sphere_matrix(), DEFAULT_OVERLAP);
    Ok(SurfaceField { ambient: realization, surface, atlas })
}

/// `X(t) = Z(g t)` on the ellipsoid, where `Z` is the sphere field's ambient
/// realization and `g` maps the ellipsoid onto the sphere.
///
/// The ellipsoid gets its own radial charts, so its search is independent of
/// the sphere search rather than a relabelling of it.
pub fn ellipsoid_field<F: ScalarField + Clone>(
    sphere: &SurfaceField<F>,
    ellipsoid: &Ellipsoid,
) -> Result<SurfaceField<TransformedField<F>>> {
    if !sphere.surface.is_unit_sphere() {
        return Err(Error::invalid("base surface field must live on the unit sphere"));
    }
    let ambient = transform_field(sphere.ambient.clone(), ellipsoid.linear_map())?;
    let atlas = ChartAtlas::new(ellipsoid.to_sphere_matrix(), sphere.atlas.overlap());
    Ok(SurfaceField { ambient, surface: ellipsoid.clone(), atlas })
}

impl<F: ScalarField> SurfaceField<F> {
    pub fn ambient(&self) -> &F {
        &self.ambient
    }

    pub fn surface(&self) -> &Ellipsoid {
        &self.surface
    }

    pub fn atlas(&self) -> &ChartAtlas {
        &self.atlas
    }

    /// Field value at a point of `R³` (meaningful on the surface).
    pub fn value_at(&self, x: &Vector3<f64>) -> f64 {
        self.ambient.value(x.as_slice())
    }

    /// Value, gradient and Hessian in chart coordinates:
    /// `∇ = Jᵀ∇Z`, `∇² = Jᵀ∇²Z J + Σ_k ∂_kZ ∂²y_k`.
    pub fn chart_jet(&self, chart: usize, uv: [f64; 2]) -> FieldJet {
        let cj = self.atlas.chart(chart).jet(uv);
        let z = self.ambient.jet(cj.point.as_slice());
        let grad_z = Vector3::new(z.gradient[0], z.gradient[1], z.gradient[2]);
        let hz = nalgebra::Matrix3::from_fn(|i, j| z.hessian[(i, j)]);
        let mut gradient = DVector::zeros(2);
        let mut hessian = DMatrix::zeros(2, 2);
        for a in 0..2 {
            gradient[a] = cj.tangents[a].dot(&grad_z);
            let ht = hz * cj.tangents[a];
            for b in a..2 {
                hessian[(a, b)] = cj.tangents[b].dot(&ht) + grad_z.dot(&cj.second[a][b]);
            }
        }
        symmetrize_from_upper(&mut hessian);
        FieldJet { value: z.value, gradient, hessian }
    }

    pub fn chart_view(&self, chart: usize) -> ChartView<'_, F> {
        ChartView { field: self, chart }
    }
}

/// One chart of a surface field, seen as a field on `R²`.
#[derive(Debug, Clone, Copy)]
pub struct ChartView<'a, F> {
    field: &'a SurfaceField<F>,
    chart: usize,
}

impl<F: ScalarField> ScalarField for ChartView<'_, F> {
    fn dim(&self) -> usize {
        2
    }

    fn jet(&self, t: &[f64]) -> FieldJet {
        self.field.chart_jet(self.chart, [t[0], t[1]])
    }

    fn value(&self, t: &[f64]) -> f64 {
        let x = self.field.atlas.chart(self.chart).point([t[0], t[1]]);
        self.field.value_at(&x)
    }

    fn scales(&self) -> FieldScales {
        let s = self.field.ambient.scales();
        let k = s.wavenumber.iter().copied().fold(0.0, f64::max);
        FieldScales { gradient: s.gradient, hessian: s.hessian, wavenumber: vec![k, k] }
    }
}

/// Parameters of the chart-seeded Newton search on a surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSearchConfig {
    /// Seeds per axis on each face.
    pub seeds_per_face: usize,
    pub max_iterations: usize,
    pub tol_grad: f64,
    pub tol_eig: f64,
    /// Ambient distance below which two points are the same point.
    pub dedup_radius: f64,
    /// As in the flat search, in seed spacings.
    pub seed_screen: Option<f64>,
    /// Longest Newton step, in seed spacings.
    pub max_step: f64,
    pub check_refinement: bool,
}

impl SurfaceSearchConfig {
    /// 40 × 40 seeds per face and tolerances from the ambient field scales.
    pub fn for_field<F: ScalarField>(field: &SurfaceField<F>) -> Self {
        let s = field.ambient.scales();
        Self {
            seeds_per_face: 40,
            max_iterations: 50,
            tol_grad: 1e-10 * s.gradient,
            tol_eig: 1e-8 * s.hessian,
            dedup_radius: 1e-4 * s.length().min(1.0),
            seed_screen: Some(3.0),
            max_step: 2.0,
            check_refinement: true,
        }
    }

    pub fn with_seeds_per_face(mut self, m: usize) -> Self {
        self.seeds_per_face = m;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCriticalPoint {
    /// Ambient coordinates.
    pub location: [f64; 3],
    pub chart: usize,
    pub chart_coords: [f64; 2],
    pub height: f64,
    pub index: usize,
    /// Ascending eigenvalues of the chart Hessian.
    pub eigenvalues: Vec<f64>,
    pub gradient_residual: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCatalog {
    /// Sorted lexicographically by ambient location.
    pub points: Vec<SurfaceCriticalPoint>,
    pub surface: Ellipsoid,
    pub config: SurfaceSearchConfig,
    pub refinement_stable: Option<bool>,
    /// `rejected_location` counts Newton runs that left their chart.
    pub diagnostics: SearchDiagnostics,
}

impl SurfaceCatalog {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points of index `i` with height `≥ u`.
    pub fn count(&self, u: f64, i: usize) -> usize {
        self.points.iter().filter(|p| p.index == i && p.height >= u).count()
    }

    pub fn counts(&self, u: f64) -> Vec<usize> {
        (0..=2).map(|i| self.count(u, i)).collect()
    }

    /// `Σ (-1)^index`; 2 for a complete catalog of a Morse function.
    pub fn morse_sum(&self) -> i64 {
        self.points.iter().map(|p| if p.index % 2 == 0 { 1 } else { -1 }).sum()
    }

    pub fn is_refinement_stable(&self) -> bool {
        self.refinement_stable.unwrap_or(false)
    }
}

/// All critical points of a surface field: damped Newton in chart
/// coordinates from a grid of seeds on every face, deduplicated across
/// charts by ambient distance.
pub fn find_surface_critical_points<F: ScalarField>(
    field: &SurfaceField<F>,
    config: &SurfaceSearchConfig,
) -> Result<SurfaceCatalog> {
    if config.seeds_per_face == 0 {
        return Err(Error::invalid("seeds_per_face must be positive"));
    }
    let (coarse, mut diagnostics) = surface_pass(field, config, config.seeds_per_face)?;
    let (points, refinement_stable) = if config.check_refinement {
        let (fine, fine_diag) = surface_pass(field, config, 2 * config.seeds_per_face)?;
        diagnostics.absorb(&fine_diag);
        let stable = index_counts(&coarse) == index_counts(&fine);
        let mut all = coarse;
        all.extend(fine);
        (dedup(all, config.dedup_radius), Some(stable))
    } else {
        (coarse, None)
    };
    Ok(SurfaceCatalog {
        points,
        surface: field.surface.clone(),
        config: config.clone(),
        refinement_stable,
        diagnostics,
    })
}

fn index_counts(points: &[SurfaceCriticalPoint]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for p in points {
        *m.entry(p.index).or_insert(0) += 1;
    }
    m
}

fn surface_pass<F: ScalarField>(
    field: &SurfaceField<F>,
    config: &SurfaceSearchConfig,
    m: usize,
) -> Result<(Vec<SurfaceCriticalPoint>, SearchDiagnostics)> {
    let h = 2.0 / m as f64;
    let nodes: Vec<(usize, [f64; 2])> = (0..6)
        .flat_map(|c| {
            (0..m * m).map(move |k| {
                let (i, j) = (k % m, k / m);
                (c, [-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h])
            })
        })
        .collect();
    let seeds: Vec<(usize, [f64; 2])> = match config.seed_screen {
        None => nodes.clone(),
        Some(radius) => nodes
            .par_iter()
            .filter(|(c, uv)| {
                let jet = field.chart_jet(*c, *uv);
                solve(&jet.hessian, &(-&jet.gradient))
                    .is_some_and(|step| step.iter().all(|s| s.abs() <= radius * h))
            })
            .copied()
            .collect(),
    };
    let reach = 1.0 + field.atlas.overlap() + config.max_step * h;
    let (lo, hi) = ([-reach; 2], [reach; 2]);
    let outcomes: Vec<(usize, NewtonOutcome)> = seeds
        .par_iter()
        .map(|(c, uv)| {
            let view = field.chart_view(*c);
            let out = newton_refine_within(
                &view,
                uv,
                config.tol_grad,
                config.max_iterations,
                config.max_step * h,
                Some((&lo, &hi)),
            );
            (*c, out)
        })
        .collect();

    let mut diag = SearchDiagnostics { grid_nodes: nodes.len(), seeds: seeds.len(), ..Default::default() };
    let mut found = Vec::new();
    for (chart, outcome) in outcomes {
        match outcome {
            NewtonOutcome::Converged { location, jet, iterations } => {
                diag.converged += 1;
                let uv = [location[0], location[1]];
                if !field.atlas.in_chart(uv) {
                    diag.rejected_location += 1;
                    continue;
                }
                let x = field.atlas.chart(chart).point(uv);
                let (index, eigenvalues) = classify_with_eigenvalues(&jet.hessian, config.tol_eig).map_err(|e| {
                    match e {
                        Error::NearSingularHessian { eigenvalue, tolerance } => {
                            Error::NonMorse { location: x.as_slice().to_vec(), eigenvalue, tolerance }
                        }
                        other => other,
                    }
                })?;
                found.push(SurfaceCriticalPoint {
                    location: [x[0], x[1], x[2]],
                    chart,
                    chart_coords: uv,
                    height: jet.value,
                    index,
                    eigenvalues,
                    gradient_residual: jet.gradient.norm(),
                    newton_iterations: iterations,
                });
            }
            NewtonOutcome::Singular => diag.singular += 1,
            NewtonOutcome::Stalled => diag.stalled += 1,
            NewtonOutcome::MaxIterations => diag.max_iterations += 1,
            NewtonOutcome::Escaped => diag.escaped += 1,
        }
    }
    Ok((dedup(found, config.dedup_radius), diag))
}

fn centrality(p: &SurfaceCriticalPoint) -> f64 {
    p.chart_coords[0].abs().max(p.chart_coords[1].abs())
}

/// Sorts by ambient location and merges points closer than `radius`,
/// keeping the copy found nearest its chart centre.
fn dedup(mut points: Vec<SurfaceCriticalPoint>, radius: f64) -> Vec<SurfaceCriticalPoint> {
    let lex = |a: &SurfaceCriticalPoint, b: &SurfaceCriticalPoint| {
        a.location
            .iter()
            .zip(&b.location)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(centrality(a).total_cmp(&centrality(b)))
            .then(a.chart.cmp(&b.chart))
    };
    points.sort_by(lex);
    let mut kept: Vec<SurfaceCriticalPoint> = Vec::new();
    for p in points {
        let near = kept.iter().position(|k| {
            let d: f64 = k.location.iter().zip(&p.location).map(|(a, b)| (a - b).powi(2)).sum();
            d.sqrt() <= radius
        });
        match near {
            Some(i) => {
                if centrality(&p) < centrality(&kept[i]) {
                    kept[i] = p;
                }
            }
            None => kept.push(p),
        }
    }
    kept.sort_by(lex);
    kept
}

/// Maps the ellipsoid catalog onto the sphere through `g` and matches it
/// against the sphere catalog.
pub fn verify_surface_correspondence(
    ellipsoid_catalog: &SurfaceCatalog,
    sphere_catalog: &SurfaceCatalog,
    ellipsoid: &Ellipsoid,
    tol_loc: f64,
) -> Result<MatchReport> {
    if !sphere_catalog.surface.is_unit_sphere() {
        return Err(Error::invalid("second catalog must come from the unit sphere"));
    }
    let xs: Vec<PointRecord> = ellipsoid_catalog
        .points
        .iter()
        .map(|p| {
            let y = ellipsoid.to_sphere(&Vector3::from(p.location));
            PointRecord { location: y.as_slice().to_vec(), height: p.height, index: p.index }
        })
        .collect();
    let zs: Vec<PointRecord> = sphere_catalog
        .points
        .iter()
        .map(|p| PointRecord { location: p.location.to_vec(), height: p.height, index: p.index })
        .collect();
    let euclid = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    Ok(match_points(&xs, &zs, &euclid, tol_loc))
}

/// Header line of the surface catalog CSV.
pub const SURFACE_CATALOG_HEADER: &str = "replicate_id,x,y,z,chart,u,v,height,index,eig1,eig2,residual,iterations";

/// Appends catalog rows with columns `replicate_id, x, y, z, chart, u, v,
/// height, index, eig1, eig2, residual, iterations`.
pub fn write_surface_catalog_csv<W: Write>(
    out: &mut W,
    replicate_id: usize,
    catalog: &SurfaceCatalog,
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(out, "{SURFACE_CATALOG_HEADER}")?;
    }
    for p in &catalog.points {
        let [x, y, z] = p.location;
        let [u, v] = p.chart_coords;
        writeln!(
            out,
            "{replicate_id},{x:.17e},{y:.17e},{z:.17e},{},{u:.17e},{v:.17e},{:.17e},{},{:.17e},{:.17e},{:.6e},{}",
            p.chart,
            p.height,
            p.index,
            p.eigenvalues[0],
            p.eigenvalues[1],
            p.gradient_residual,
            p.newton_iterations
        )?;
    }
    Ok(())
}

/// Plain-text quad mesh of the surface with field values.
///
/// Each face is sampled on an `(n + 1) × (n + 1)` grid over `[-1, 1]²`.
/// Vertex lines are `v x y z value`; faces are `f i j k l` with 1-based
/// vertex numbers, counter-clockwise in chart coordinates. Vertices along
/// face seams are repeated.
pub fn write_surface_mesh<W: Write, F: ScalarField>(
    out: &mut W,
    field: &SurfaceField<F>,
    n: usize,
) -> std::io::Result<()> {
    let n = n.max(1);
    writeln!(out, "# surface mesh: 6 faces, {} vertices per face", (n + 1) * (n + 1))?;
    let step = 2.0 / n as f64;
    for chart in field.atlas.charts() {
        for j in 0..=n {
            for i in 0..=n {
                let uv = [-1.0 + i as f64 * step, -1.0 + j as f64 * step];
                let x = chart.point(uv);
                writeln!(out, "v {:.9e} {:.9e} {:.9e} {:.9e}", x[0], x[1], x[2], field.value_at(&x))?;
            }
        }
    }
    let per_face = (n + 1) * (n + 1);
    for c in 0..6 {
        let base = c * per_face + 1;
        for j in 0..n {
            for i in 0..n {
                let a = base + j * (n + 1) + i;
                writeln!(out, "f {} {} {} {}", a, a + 1, a + n + 2, a + n + 1)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CovarianceModel, SpectralField};
    use crate::rng::substream;
    use nalgebra::Matrix3;
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, SQRT_2};

    fn realization(seed: u64) -> SpectralField {
        let model = CovarianceModel::squared_exponential(0.5, 3).unwrap();
        SpectralField::from_seed(&model, 256, seed, None).unwrap()
    }

    fn random_uv<R: Rng>(rng: &mut R) -> [f64; 2] {
        [rng.random_range(-1.1..1.1), rng.random_range(-1.1..1.1)]
    }

    fn rotated_ellipsoid() -> Ellipsoid {
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.5, 0.9).into_inner();
        Ellipsoid::with_rotation([2.0, 1.0, 0.5], r).unwrap()
    }

    fn assert_jet_matches_fd<F: ScalarField>(field: &SurfaceField<F>, chart: usize, uv: [f64; 2]) {
        let h = 1e-5;
        let jet = field.chart_jet(chart, uv);
        for a in 0..2 {
            let mut up = uv;
            let mut dn = uv;
            up[a] += h;
            dn[a] -= h;
            let ju = field.chart_jet(chart, up);
            let jd = field.chart_jet(chart, dn);
            let g_fd = (ju.value - jd.value) / (2.0 * h);
            let scale = 1.0 + jet.gradient.norm();
            assert!((g_fd - jet.gradient[a]).abs() < 1e-6 * scale, "{g_fd} vs {}", jet.gradient[a]);
            for b in 0..2 {
                let h_fd = (ju.gradient[b] - jd.gradient[b]) / (2.0 * h);
                let scale = 1.0 + jet.hessian.amax();
                assert!((h_fd - jet.hessian[(a, b)]).abs() < 1e-6 * scale);
            }
        }
    }

    #[test]
    fn chart_jets_match_finite_differences() {
        let sphere = sphere_field(realization(1)).unwrap();
        let ell = ellipsoid_field(&sphere, &rotated_ellipsoid()).unwrap();
        let mut rng = substream(99, 0);
        for _ in 0..50 {
            let chart = rng.random_range(0..6);
            let uv = random_uv(&mut rng);
            assert_jet_matches_fd(&sphere, chart, uv);
            assert_jet_matches_fd(&ell, chart, uv);
        }
    }

    #[test]
    fn overlapping_charts_agree() {
        let sphere = sphere_field(realization(2)).unwrap();
        let ell = ellipsoid_field(&sphere, &rotated_ellipsoid()).unwrap();
        for field in [&sphere as &dyn Probe, &ell as &dyn Probe] {
            let atlas = field.atlas_ref();
            let mut shared = 0;
            for a in 0..6 {
                for uv in [[1.05, 0.2], [-1.08, -0.4], [0.3, 1.02], [0.99, 0.99]] {
                    let x = atlas.chart(a).point(uv);
                    for b in (0..6).filter(|&b| b != a) {
                        let Some(uv_b) = atlas.chart(b).coordinates(&x) else { continue };
                        if !atlas.in_chart(uv_b) {
                            continue;
                        }
                        shared += 1;
                        assert!((atlas.chart(b).point(uv_b) - x).norm() < 1e-14);
                        assert!((field.chart_value(a, uv) - field.chart_value(b, uv_b)).abs() < 1e-12);
                    }
                }
            }
            assert!(shared > 20);
        }
    }

    trait Probe {
        fn atlas_ref(&self) -> &ChartAtlas;
        fn chart_value(&self, chart: usize, uv: [f64; 2]) -> f64;
    }

    impl<F: ScalarField> Probe for SurfaceField<F> {
        fn atlas_ref(&self) -> &ChartAtlas {
            self.atlas()
        }
        fn chart_value(&self, chart: usize, uv: [f64; 2]) -> f64 {
            self.chart_jet(chart, uv).value
        }
    }

    #[test]
    fn ellipsoid_field_is_composition() {
        let sphere = sphere_field(realization(3)).unwrap();
        let e = rotated_ellipsoid();
        let ell = ellipsoid_field(&sphere, &e).unwrap();
        let mut rng = substream(5, 0);
        for _ in 0..1000 {
            let chart = rng.random_range(0..6);
            let x = ell.atlas().chart(chart).point(random_uv(&mut rng));
            assert!(e.surface_residual(&x).abs() < 1e-12);
            let direct = sphere.ambient().value(e.to_sphere(&x).as_slice());
            assert!((ell.value_at(&x) - direct).abs() < 1e-12);
        }
        let round = ellipsoid_field(&sphere, &Ellipsoid::new([1.0; 3]).unwrap()).unwrap();
        for chart in 0..6 {
            let uv = random_uv(&mut rng);
            assert!((round.chart_jet(chart, uv).value - sphere.chart_jet(chart, uv).value).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_wrong_dimension() {
        let model = CovarianceModel::squared_exponential(1.0, 2).unwrap();
        let f = SpectralField::from_seed(&model, 16, 0, None).unwrap();
        assert!(matches!(sphere_field(f), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn single_wave_has_two_critical_points() {
        // Z = sqrt(2) cos(ω·x + π/2) = -sqrt(2) sin(ω·x). On the sphere the
        // tangential gradient is -sqrt(2) cos(ω·x) (ω - (ω·x) x), which
        // vanishes only at ±ω/|ω| when |ω| < π/2.
        let omega = Vector3::new(0.6, -0.8, 0.9);
        let model = CovarianceModel::squared_exponential(1.0, 3).unwrap();
        let z = SpectralField::from_waves(&model, &[omega.as_slice().to_vec()], &[FRAC_PI_2], None).unwrap();
        let sphere = sphere_field(z).unwrap();
        let config = SurfaceSearchConfig::for_field(&sphere).with_seeds_per_face(12);
        let cat = find_surface_critical_points(&sphere, &config).unwrap();
        assert_eq!(cat.len(), 2);
        assert_eq!(cat.morse_sum(), 2);
        assert_eq!(cat.refinement_stable, Some(true));
        let dir = omega.normalize();
        let k = omega.norm();
        for p in &cat.points {
            let x = Vector3::from(p.location);
            let (want_x, want_h, want_i) =
                if x.dot(&dir) > 0.0 { (dir, -SQRT_2 * k.sin(), 0) } else { (-dir, SQRT_2 * k.sin(), 2) };
            assert!((x - want_x).norm() < 1e-9);
            assert!((p.height - want_h).abs() < 1e-12);
            assert_eq!(p.index, want_i);
        }
    }

    #[test]
    fn constant_field_is_non_morse() {
        let model = CovarianceModel::squared_exponential(1.0, 3).unwrap();
        let z = SpectralField::from_waves(&model, &[vec![0.0; 3]], &[0.3], None).unwrap();
        let sphere = sphere_field(z).unwrap();
        let mut config = SurfaceSearchConfig::for_field(&sphere).with_seeds_per_face(4);
        config.seed_screen = None;
        let err = find_surface_critical_points(&sphere, &config).unwrap_err();
        assert!(matches!(err, Error::NonMorse { .. }), "{err}");
    }

    #[test]
    fn sphere_catalog_topology_and_ambient_cross_check() {
        let sphere = sphere_field(realization(7)).unwrap();
        let config = SurfaceSearchConfig::for_field(&sphere).with_seeds_per_face(16);
        let cat = find_surface_critical_points(&sphere, &config).unwrap();
        assert!(cat.len() > 4);
        assert_eq!(cat.morse_sum(), 2);
        assert_eq!(cat.refinement_stable, Some(true));
        for p in &cat.points {
            let x = Vector3::from(p.location);
            assert!((x.norm() - 1.0).abs() < 1e-12);
            // At a critical point the chart Hessian is Jᵀ(∇²Z - (∇Z·x) I)J.
            let z = sphere.ambient().jet(x.as_slice());
            let radial: f64 = (0..3).map(|k| z.gradient[k] * x[k]).sum();
            let cj = sphere.atlas().chart(p.chart).jet(p.chart_coords);
            let hz = Matrix3::from_fn(|i, j| z.hessian[(i, j)]) - Matrix3::identity() * radial;
            let chart_h = sphere.chart_jet(p.chart, p.chart_coords).hessian;
            for a in 0..2 {
                for b in 0..2 {
                    let projected = cj.tangents[a].dot(&(hz * cj.tangents[b]));
                    assert!((projected - chart_h[(a, b)]).abs() < 1e-8 * (1.0 + chart_h.amax()));
                }
            }
        }
    }

    #[test]
    fn ellipsoid_correspondence() {
        let sphere = sphere_field(realization(8)).unwrap();
        let config = SurfaceSearchConfig::for_field(&sphere).with_seeds_per_face(16);
        let sphere_cat = find_surface_critical_points(&sphere, &config).unwrap();

        let unit = Ellipsoid::new([1.0; 3]).unwrap();
        let round = ellipsoid_field(&sphere, &unit).unwrap();
        let round_cat = find_surface_critical_points(&round, &config).unwrap();
        let r = verify_surface_correspondence(&round_cat, &sphere_cat, &unit, 1e-6).unwrap();
        assert!(r.pass);
        assert!(r.max_distance < 1e-12);

        let e = Ellipsoid::new([2.0, 1.0, 0.5]).unwrap();
        let ell = ellipsoid_field(&sphere, &e).unwrap();
        let ell_config = SurfaceSearchConfig::for_field(&ell).with_seeds_per_face(24);
        let ell_cat = find_surface_critical_points(&ell, &ell_config).unwrap();
        assert_eq!(ell_cat.morse_sum(), 2);
        let r = verify_surface_correspondence(&ell_cat, &sphere_cat, &e, 1e-6).unwrap();
        assert!(r.pass, "{r:?}");

        let mut dropped = sphere_cat.clone();
        dropped.points.remove(0);
        let r = verify_surface_correspondence(&ell_cat, &dropped, &e, 1e-6).unwrap();
        assert!(!r.pass);
        assert_eq!(r.unmatched_x.len(), 1);
        assert!(r.unmatched_z.is_empty());
    }

    #[test]
    fn csv_and_mesh_layout() {
        let sphere = sphere_field(realization(9)).unwrap();
        let config = SurfaceSearchConfig::for_field(&sphere).with_seeds_per_face(8);
        let cat = find_surface_critical_points(&sphere, &config).unwrap();
        let mut buf = Vec::new();
        write_surface_catalog_csv(&mut buf, 3, &cat, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), cat.len() + 1);
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == 13 && l.starts_with("3,")));

        let mut buf = Vec::new();
        write_surface_mesh(&mut buf, &sphere, 4).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 6 * 25);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 6 * 16);
    }
}
