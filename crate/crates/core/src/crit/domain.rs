use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Search domain: an axis-aligned box with an excluded boundary margin, or a
/// flat torus `Π [0, L_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Box { lower: Vec<f64>, upper: Vec<f64>, margin: f64 },
    Torus { period: Vec<f64> },
}

impl Domain {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>, margin: f64) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::invalid("box corners must have equal, positive dimension"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::invalid(format!("box needs upper > lower on every axis: {lower:?} {upper:?}")));
        }
        let min_side = lower.iter().zip(&upper).map(|(l, u)| u - l).fold(f64::INFINITY, f64::min);
        if !(margin >= 0.0) || 2.0 * margin >= min_side {
            return Err(Error::invalid(format!("margin {margin} must be in [0, {})", min_side / 2.0)));
        }
        Ok(Domain::Box { lower, upper, margin })
    }

    /// Box with the default margin, 2% of the shortest side.
    pub fn box_with_default_margin(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let min_side = lower.iter().zip(&upper).map(|(l, u)| u - l).fold(f64::INFINITY, f64::min);
        Self::new_box(lower, upper, 0.02 * min_side.max(0.0))
    }

    pub fn torus(period: Vec<f64>) -> Result<Self> {
        if period.is_empty() || period.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!("torus periods must be positive: {period:?}")));
        }
        Ok(Domain::Torus { period })
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Box { lower, .. } => lower.len(),
            Domain::Torus { period } => period.len(),
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, Domain::Torus { .. })
    }

    pub fn volume(&self) -> f64 {
        match self {
            Domain::Box { lower, upper, .. } => lower.iter().zip(upper).map(|(l, u)| u - l).product(),
            Domain::Torus { period } => period.iter().product(),
        }
    }

    /// Volume of the region where critical points are counted: the box minus
    /// its margin, or the whole torus.
    pub fn counting_volume(&self) -> f64 {
        match self {
            Domain::Box { lower, upper, margin } => {
                lower.iter().zip(upper).map(|(l, u)| u - l - 2.0 * margin).product()
            }
            Domain::Torus { period } => period.iter().product(),
        }
    }

    /// Extent covered by seeds: the full box, or one fundamental cell.
    pub fn seed_extent(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Box { lower, upper, .. } => (lower.clone(), upper.clone()),
            Domain::Torus { period } => (vec![0.0; period.len()], period.clone()),
        }
    }

    /// Strictly inside the box after removing the margin; always true on the
    /// torus.
    pub fn contains(&self, t: &[f64]) -> bool {
        match self {
            Domain::Box { lower, upper, margin } => {
                t.iter().zip(lower.iter().zip(upper)).all(|(x, (l, u))| *x > l + margin && *x < u - margin)
            }
            Domain::Torus { .. } => t.iter().all(|x| x.is_finite()),
        }
    }

    /// Canonical representative: wrapped into `[0, L)` on the torus.
    pub fn wrap(&self, t: &mut [f64]) {
        if let Domain::Torus { period } = self {
            for (x, l) in t.iter_mut().zip(period) {
                *x = x.rem_euclid(*l);
                if *x >= *l {
                    *x = 0.0;
                }
            }
        }
    }

    /// Euclidean distance, or the flat-torus distance.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Domain::Box { .. } => crate::linalg::norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>()),
            Domain::Torus { period } => a
                .iter()
                .zip(b)
                .zip(period)
                .map(|((x, y), l)| {
                    let d = (x - y).rem_euclid(*l);
                    let d = d.min(l - d);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Euler characteristic of a closed domain.
    pub fn euler_characteristic(&self) -> Option<i64> {
        match self {
            Domain::Torus { .. } => Some(0),
            Domain::Box { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_volumes_and_membership() {
        let d = Domain::box_with_default_margin(vec![0.0, 0.0], vec![10.0, 5.0]).unwrap();
        assert_eq!(d.volume(), 50.0);
        let Domain::Box { margin, .. } = d else { unreachable!() };
        assert!((margin - 0.1).abs() < 1e-15);
        assert!((d.counting_volume() - 9.8 * 4.8).abs() < 1e-12);
        assert!(d.contains(&[5.0, 2.5]));
        assert!(!d.contains(&[0.05, 2.5]));
        assert!(!d.contains(&[5.0, 4.95]));
    }

    #[test]
    fn invalid_domains() {
        assert!(Domain::new_box(vec![0.0], vec![0.0], 0.0).is_err());
        assert!(Domain::new_box(vec![0.0, 1.0], vec![1.0], 0.0).is_err());
        assert!(Domain::new_box(vec![0.0], vec![1.0], 0.6).is_err());
        assert!(Domain::torus(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn torus_metric_wraps() {
        let d = Domain::torus(vec![10.0, 10.0]).unwrap();
        assert!((d.distance(&[0.1, 5.0], &[9.9, 5.0]) - 0.2).abs() < 1e-12);
        let mut t = [-0.5, 23.0];
        d.wrap(&mut t);
        assert!((t[0] - 9.5).abs() < 1e-12 && (t[1] - 3.0).abs() < 1e-12);
        assert_eq!(d.volume(), 100.0);
        assert_eq!(d.euler_characteristic(), Some(0));
    }
}
