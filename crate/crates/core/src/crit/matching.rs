use serde::{Deserialize, Serialize};

use super::catalog::CriticalCatalog;
use crate::error::{Error, Result};
use crate::field::Diffeomorphism;

/// Heights of matched critical points must agree to this absolute tolerance.
pub const TOL_HEIGHT: f64 = 1e-9;

/// A critical point reduced to what matching needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRecord {
    pub location: Vec<f64>,
    pub height: f64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub x: usize,
    pub z: usize,
    pub distance: f64,
    pub height_difference: f64,
    pub index_x: usize,
    pub index_z: usize,
}

/// Outcome of matching two critical-point sets that should correspond one to
/// one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_x: Vec<usize>,
    pub unmatched_z: Vec<usize>,
    /// Positions in `pairs` whose indices differ.
    pub index_mismatches: Vec<usize>,
    /// Positions in `pairs` whose heights differ by `TOL_HEIGHT` or more.
    pub height_mismatches: Vec<usize>,
    pub max_distance: f64,
    pub max_height_difference: f64,
    pub pass: bool,
}

/// Greedy nearest-neighbour matching. Candidate pairs closer than `tol_loc`
/// are taken in order of increasing distance; ties go to the pair that comes
/// first in the (lexicographically sorted) inputs.
pub fn match_points(
    xs: &[PointRecord],
    zs: &[PointRecord],
    distance: &dyn Fn(&[f64], &[f64]) -> f64,
    tol_loc: f64,
) -> MatchReport {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, x) in xs.iter().enumerate() {
        for (j, z) in zs.iter().enumerate() {
            let d = distance(&x.location, &z.location);
            if d < tol_loc {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_x = vec![false; xs.len()];
    let mut used_z = vec![false; zs.len()];
    let mut pairs = Vec::new();
    for (d, i, j) in candidates {
        if used_x[i] || used_z[j] {
            continue;
        }
        used_x[i] = true;
        used_z[j] = true;
        pairs.push(MatchedPair {
            x: i,
            z: j,
            distance: d,
            height_difference: (xs[i].height - zs[j].height).abs(),
            index_x: xs[i].index,
            index_z: zs[j].index,
        });
    }
    pairs.sort_by_key(|p| p.x);
    let unmatched_x: Vec<usize> = (0..xs.len()).filter(|&i| !used_x[i]).collect();
    let unmatched_z: Vec<usize> = (0..zs.len()).filter(|&j| !used_z[j]).collect();
    let index_mismatches: Vec<usize> =
        pairs.iter().enumerate().filter(|(_, p)| p.index_x != p.index_z).map(|(k, _)| k).collect();
    let height_mismatches: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| !(p.height_difference < TOL_HEIGHT))
        .map(|(k, _)| k)
        .collect();
    let max_distance = pairs.iter().map(|p| p.distance).fold(0.0, f64::max);
    let max_height_difference = pairs.iter().map(|p| p.height_difference).fold(0.0, f64::max);
    let pass = unmatched_x.is_empty()
        && unmatched_z.is_empty()
        && index_mismatches.is_empty()
        && height_mismatches.is_empty();
    MatchReport {
        pairs,
        unmatched_x,
        unmatched_z,
        index_mismatches,
        height_mismatches,
        max_distance,
        max_height_difference,
        pass,
    }
}

/// Checks the one-to-one correspondence between the critical points of
/// `X = Z ∘ f` and those of `Z`: every `f(t)` for `t` in `catalog_x` must
/// match a point of `catalog_z` within `tol_loc`, with equal index and
/// height.
pub fn match_catalogs(
    catalog_x: &CriticalCatalog,
    catalog_z: &CriticalCatalog,
    f: &Diffeomorphism,
    tol_loc: f64,
) -> Result<MatchReport> {
    if catalog_x.dim() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), found: catalog_x.dim() });
    }
    if catalog_z.dim() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), found: catalog_z.dim() });
    }
    let xs: Vec<PointRecord> = catalog_x
        .points
        .iter()
        .map(|p| {
            let mut loc = f.forward(&p.location).as_slice().to_vec();
            catalog_z.domain.wrap(&mut loc);
            PointRecord { location: loc, height: p.height, index: p.index }
        })
        .collect();
    let zs: Vec<PointRecord> = catalog_z
        .points
        .iter()
        .map(|p| PointRecord { location: p.location.clone(), height: p.height, index: p.index })
        .collect();
    let domain = catalog_z.domain.clone();
    Ok(match_points(&xs, &zs, &|a, b| domain.distance(a, b), tol_loc))
}
