use std::io::Write;

use serde::{Deserialize, Serialize};

use super::domain::Domain;
use super::search::{SearchConfig, SearchDiagnostics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    pub height: f64,
    /// Number of negative Hessian eigenvalues.
    pub index: usize,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub gradient_residual: f64,
    pub newton_iterations: usize,
}

/// Deduplicated critical points of one field over one domain, sorted
/// lexicographically by location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalCatalog {
    pub points: Vec<CriticalPoint>,
    pub domain: Domain,
    pub config: SearchConfig,
    /// `Some(true)` when per-index counts did not change under one doubling
    /// of the grid resolution; `None` when the check was not run.
    pub refinement_stable: Option<bool>,
    pub diagnostics: SearchDiagnostics,
}

impl CriticalCatalog {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Per-index counts at threshold `u`.
    pub fn counts(&self, u: f64) -> Vec<usize> {
        (0..=self.dim()).map(|i| count_mu(self, u, i)).collect()
    }

    pub fn is_refinement_stable(&self) -> bool {
        self.refinement_stable.unwrap_or(false)
    }
}

/// `#{p : height(p) ≥ u, index(p) = i}`.
pub fn count_mu(catalog: &CriticalCatalog, u: f64, i: usize) -> usize {
    catalog.points.iter().filter(|p| p.index == i && p.height >= u).count()
}

/// `Σ_i (-1)^i μ_i(M, -∞)`.
pub fn morse_sum(catalog: &CriticalCatalog) -> i64 {
    catalog.points.iter().map(|p| if p.index % 2 == 0 { 1 } else { -1 }).sum()
}

/// Header line of the catalog CSV for dimension `dim`.
pub fn catalog_csv_header(dim: usize) -> String {
    let mut cols = vec!["replicate_id".to_string()];
    cols.extend((1..=dim).map(|i| format!("x{i}")));
    cols.push("height".into());
    cols.push("index".into());
    cols.extend((1..=dim).map(|i| format!("eig{i}")));
    cols.push("residual".into());
    cols.push("iterations".into());
    cols.join(",")
}

/// Appends one row per point; writes the header first when `header` is set.
///
/// Columns: `replicate_id, x1..xN, height, index, eig1..eigN, residual,
/// iterations`. Reals are written in `{:.17e}` notation.
pub fn write_catalog_csv<W: Write>(
    out: &mut W,
    replicate_id: usize,
    catalog: &CriticalCatalog,
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(out, "{}", catalog_csv_header(catalog.dim()))?;
    }
    for p in &catalog.points {
        write!(out, "{replicate_id}")?;
        for x in &p.location {
            write!(out, ",{x:.17e}")?;
        }
        write!(out, ",{:.17e},{}", p.height, p.index)?;
        for e in &p.eigenvalues {
            write!(out, ",{e:.17e}")?;
        }
        writeln!(out, ",{:.6e},{}", p.gradient_residual, p.newton_iterations)?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn point(x: f64, height: f64, index: usize) -> CriticalPoint {
        CriticalPoint {
            location: vec![x, 0.5],
            height,
            index,
            eigenvalues: vec![-1.0, 1.0],
            gradient_residual: 1e-12,
            newton_iterations: 3,
        }
    }

    pub(crate) fn toy_catalog() -> CriticalCatalog {
        let domain = Domain::torus(vec![4.0, 4.0]).unwrap();
        let config = SearchConfig {
            resolution: vec![4, 4],
            max_iterations: 10,
            tol_grad: 1e-10,
            tol_eig: 1e-8,
            dedup_radius: 1e-4,
            seed_screen: None,
            max_step: 2.0,
            check_refinement: false,
        };
        CriticalCatalog {
            points: vec![point(0.5, 1.2, 2), point(1.0, 0.3, 1), point(2.0, -0.1, 1), point(3.0, -1.5, 0)],
            domain,
            config,
            refinement_stable: None,
            diagnostics: Default::default(),
        }
    }

    #[test]
    fn counting() {
        let c = toy_catalog();
        let total: usize = (0..=2).map(|i| count_mu(&c, f64::NEG_INFINITY, i)).sum();
        assert_eq!(total, c.len());
        assert!((0..=2).all(|i| count_mu(&c, 1.3, i) == 0));
        assert_eq!(c.counts(0.0), vec![0, 1, 1]);
        assert_eq!(morse_sum(&c), 0);
        let mut prev = usize::MAX;
        for u in [-2.0, -1.0, 0.0, 0.5, 1.0, 2.0] {
            let n = count_mu(&c, u, 1);
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn csv_layout() {
        let c = toy_catalog();
        let mut buf = Vec::new();
        write_catalog_csv(&mut buf, 7, &c, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "replicate_id,x1,x2,height,index,eig1,eig2,residual,iterations");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("7,5.00000000000000000e-1,"));
        assert_eq!(lines[1].split(',').count(), 9);
    }
}
