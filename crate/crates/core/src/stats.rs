//! Summary statistics and the two-sample Kolmogorov–Smirnov test used by the
//! verification experiments.

use serde::Serialize;

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, std_error: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, std_error, n }
    }

    /// `|a - b|` measured in combined standard errors.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        z_score(self.mean, self.std_error, other.mean, other.std_error)
    }
}

/// `|a - b| / sqrt(se_a² + se_b²)`; zero when both sides agree exactly.
pub fn z_score(a: f64, se_a: f64, b: f64, se_b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / se_a.hypot(se_b)
}

/// Ratio of two independent estimates with a delta-method standard error.
pub fn ratio(num: &Estimate, den: &Estimate) -> (f64, f64) {
    let r = num.mean / den.mean;
    let rel = (num.std_error / num.mean).hypot(den.std_error / den.mean);
    (r, r.abs() * rel)
}

/// Clustered ratio estimator `Σ y_r / Σ w_r` over replicates with a
/// delta-method standard error that treats replicates as the independent
/// units.
pub fn clustered_ratio(y: &[f64], w: &[f64]) -> (f64, f64) {
    assert_eq!(y.len(), w.len());
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let wbar = w.iter().sum::<f64>() / n;
    let r = ybar / wbar;
    if y.len() < 2 {
        return (r, f64::NAN);
    }
    let resid_var = y
        .iter()
        .zip(w)
        .map(|(yi, wi)| (yi - r * wi).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (r, (resid_var / n).sqrt() / wbar)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic Kolmogorov
/// distribution and the Stephens small-sample correction.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n1, n2) = (x.len(), y.len());
    if n1 == 0 || n2 == 0 {
        return KsResult { statistic: f64::NAN, p_value: f64::NAN, n1, n2 };
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let v = x[i].min(y[j]);
        while i < n1 && x[i] <= v {
            i += 1;
        }
        while j < n2 && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    KsResult { statistic: d, p_value: kolmogorov_q(lambda), n1, n2 }
}

/// Mean variance inflation of the empirical CDF of grouped observations
/// over the iid value, evaluated at `probes` and floored at 1. Groups are the
/// independent units; observations within a group may be dependent.
pub fn design_effect(groups: &[Vec<f64>], probes: &[f64]) -> f64 {
    let n: usize = groups.iter().map(Vec::len).sum();
    let w: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let mut ratios = Vec::new();
    for &u in probes {
        let y: Vec<f64> = groups.iter().map(|g| g.iter().filter(|&&h| h <= u).count() as f64).collect();
        let (f, se) = clustered_ratio(&y, &w);
        let iid = f * (1.0 - f) / n as f64;
        if iid > 0.0 && se.is_finite() {
            ratios.push(se * se / iid);
        }
    }
    if ratios.is_empty() {
        return 1.0;
    }
    (ratios.iter().sum::<f64>() / ratios.len() as f64).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusteredKsResult {
    pub statistic: f64,
    /// Calibrated with the effective sample sizes `n / design_effect`.
    pub p_value: f64,
    /// The plain iid p-value, for reference.
    pub p_value_iid: f64,
    pub n1: usize,
    pub n2: usize,
    pub design_effect1: f64,
    pub design_effect2: f64,
}

/// Two-sample KS test for observations that come in independent groups
/// (one group per replicate). The statistic is the ordinary one; its null
/// distribution uses effective sample sizes estimated from the
/// between-group variability of the empirical CDF at the pooled deciles.
pub fn ks_two_sample_clustered(a: &[Vec<f64>], b: &[Vec<f64>]) -> ClusteredKsResult {
    let xa: Vec<f64> = a.iter().flatten().copied().collect();
    let xb: Vec<f64> = b.iter().flatten().copied().collect();
    let plain = ks_two_sample(&xa, &xb);
    let mut pooled: Vec<f64> = xa.iter().chain(&xb).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let probes: Vec<f64> = if pooled.is_empty() {
        Vec::new()
    } else {
        (1..10).map(|k| pooled[(k * pooled.len() / 10).min(pooled.len() - 1)]).collect()
    };
    let (d1, d2) = (design_effect(a, &probes), design_effect(b, &probes));
    let (e1, e2) = (plain.n1 as f64 / d1, plain.n2 as f64 / d2);
    let sq = (e1 * e2 / (e1 + e2)).sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * plain.statistic;
    ClusteredKsResult {
        statistic: plain.statistic,
        p_value: if plain.statistic.is_nan() { f64::NAN } else { kolmogorov_q(lambda) },
        p_value_iid: plain.p_value,
        n1: plain.n1,
        n2: plain.n2,
        design_effect1: d1,
        design_effect2: d2,
    }
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn groups(seed: u64, shared: f64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..60)
            .map(|_| {
                let offset: f64 = StandardNormal.sample(&mut rng);
                (0..50)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        shared * offset + (1.0 - shared * shared).sqrt() * e
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn design_effect_near_one_for_iid_groups() {
        let r = ks_two_sample_clustered(&groups(1, 0.0), &groups(2, 0.0));
        assert!(r.design_effect1 < 1.6 && r.design_effect2 < 1.6, "{r:?}");
        assert!(r.p_value >= r.p_value_iid);
    }

    #[test]
    fn shared_offsets_inflate_the_design_effect() {
        // Intra-group correlation 0.25 with 50 per group: 1 + 49 · 0.25 ≈ 13.
        let r = ks_two_sample_clustered(&groups(3, 0.5), &groups(4, 0.5));
        assert!(r.design_effect1 > 5.0 && r.design_effect2 > 5.0, "{r:?}");
        assert!(r.p_value > r.p_value_iid);
    }

    #[test]
    fn estimate_basic() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e.std_error - sd / 2.0).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_known_values() {
        // Q(1.36) ≈ 0.0505 and Q(1.63) ≈ 0.0098 (classical critical values).
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 2e-3);
        assert!((kolmogorov_q(1.63) - 0.0098).abs() < 1e-3);
        assert_eq!(kolmogorov_q(0.0), 1.0);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let r = ks_two_sample(&a, &a);
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value > 0.99);
        let b: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
        let r = ks_two_sample(&a, &b);
        assert!((r.statistic - 0.3).abs() < 1e-2);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn clustered_ratio_matches_pooled_fraction() {
        let y = [3.0, 1.0, 2.0];
        let w = [6.0, 4.0, 5.0];
        let (r, se) = clustered_ratio(&y, &w);
        assert!((r - 6.0 / 15.0).abs() < 1e-15);
        assert!(se > 0.0);
    }
}
