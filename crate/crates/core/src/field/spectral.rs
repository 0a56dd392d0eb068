use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{CovarianceKind, CovarianceModel, FieldJet, FieldScales, ScalarField};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// One cosine term `amp · cos(⟨freq, t⟩ + phase)` of the evaluation list.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Wave {
    freq: [f64; 3],
    amp: f64,
    phase: f64,
}

/// Random-wave realization
/// `Z(t) = sqrt(2/K) Σ_k cos(⟨ω_k, t⟩ + φ_k)`
/// with `ω_k` drawn from the model's spectral measure and `φ_k` uniform on
/// `[0, 2π)`. Its ensemble covariance is `E[cos⟨ω, h⟩] = ρ(‖h‖²)` and every
/// point has unit variance for any `K ≥ 1`.
///
/// In torus mode the frequencies are rounded to the lattice `(2π/L) Z^N`, which
/// makes the realization exactly `L`-periodic along every axis. Waves that
/// share a lattice frequency (up to sign) are then merged into a single cosine
/// for evaluation; the stored frequency and phase lists are left untouched.
#[derive(Debug, Clone)]
pub struct SpectralField {
    model: CovarianceModel,
    frequencies: Vec<[f64; 3]>,
    phases: Vec<f64>,
    amplitude: f64,
    torus_period: Option<f64>,
    seed: Option<u64>,
    waves: Vec<Wave>,
}

impl SpectralField {
    /// Draws `k` waves from `rng`.
    pub fn sample<R: Rng + ?Sized>(
        model: &CovarianceModel,
        k: usize,
        rng: &mut R,
        torus_period: Option<f64>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("number of waves must be at least 1"));
        }
        validate_period(torus_period)?;
        let mut frequencies = Vec::with_capacity(k);
        let mut phases = Vec::with_capacity(k);
        for _ in 0..k {
            let mut w = model.sample_frequency(rng);
            if let Some(l) = torus_period {
                let step = TAU / l;
                for wi in w.iter_mut().take(model.dim()) {
                    *wi = step * (*wi / step).round();
                }
            }
            frequencies.push(w);
            phases.push(rng.random::<f64>() * TAU);
        }
        Ok(Self::assemble(*model, frequencies, phases, torus_period, None))
    }

    /// Draws `k` waves from a ChaCha stream seeded with `seed`, recording the
    /// seed for provenance.
    pub fn from_seed(model: &CovarianceModel, k: usize, seed: u64, torus_period: Option<f64>) -> Result<Self> {
        let mut rng: StreamRng = crate::rng::substream(seed, 0);
        let mut field = Self::sample(model, k, &mut rng, torus_period)?;
        field.seed = Some(seed);
        Ok(field)
    }

    /// Builds a realization from explicit frequency rows and phases.
    /// Frequencies must already lie on the lattice when a torus period is
    /// given.
    pub fn from_waves(
        model: &CovarianceModel,
        frequencies: &[Vec<f64>],
        phases: &[f64],
        torus_period: Option<f64>,
    ) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::invalid("number of waves must be at least 1"));
        }
        if frequencies.len() != phases.len() {
            return Err(Error::invalid(format!(
                "{} frequency rows but {} phases",
                frequencies.len(),
                phases.len()
            )));
        }
        validate_period(torus_period)?;
        let dim = model.dim();
        let mut rows = Vec::with_capacity(frequencies.len());
        for f in frequencies {
            if f.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: f.len() });
            }
            let mut w = [0.0; 3];
            w[..dim].copy_from_slice(f);
            if let Some(l) = torus_period {
                let step = TAU / l;
                for &wi in &w[..dim] {
                    let k = wi / step;
                    if (k - k.round()).abs() > 1e-9 * k.abs().max(1.0) {
                        return Err(Error::invalid(format!(
                            "frequency {wi} is not on the lattice of period {l}"
                        )));
                    }
                }
            }
            rows.push(w);
        }
        Ok(Self::assemble(*model, rows, phases.to_vec(), torus_period, None))
    }

    fn assemble(
        model: CovarianceModel,
        frequencies: Vec<[f64; 3]>,
        phases: Vec<f64>,
        torus_period: Option<f64>,
        seed: Option<u64>,
    ) -> Self {
        let amplitude = (2.0 / frequencies.len() as f64).sqrt();
        let waves = match torus_period {
            None => frequencies
                .iter()
                .zip(&phases)
                .map(|(&freq, &phase)| Wave { freq, amp: amplitude, phase })
                .collect(),
            Some(l) => merge_lattice_waves(model.dim(), &frequencies, &phases, amplitude, l),
        };
        Self { model, frequencies, phases, amplitude, torus_period, seed, waves }
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn num_waves(&self) -> usize {
        self.frequencies.len()
    }

    /// Number of cosine terms actually summed during evaluation.
    pub fn num_terms(&self) -> usize {
        self.waves.len()
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn frequency(&self, k: usize) -> &[f64] {
        &self.frequencies[k][..self.model.dim()]
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn torus_period(&self) -> Option<f64> {
        self.torus_period
    }

    pub fn is_periodic(&self) -> bool {
        self.torus_period.is_some()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Serializes to the plain-text realization format:
    ///
    /// ```text
    /// # critfield spectral realization v1
    /// kind squared-exponential
    /// length_scale 1
    /// dim 2
    /// waves 3
    /// seed 42            (or "none")
    /// torus_period none  (or the period)
    /// <ω_1 ... ω_N φ>    (one row per wave)
    /// ```
    ///
    /// Numbers use the shortest decimal representation that parses back to
    /// the same `f64`, so the round trip is lossless.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let dim = self.model.dim();
        let _ = writeln!(out, "# critfield spectral realization v1");
        let _ = writeln!(out, "kind {}", self.model.kind().name());
        let _ = writeln!(out, "length_scale {}", self.model.length_scale());
        let _ = writeln!(out, "dim {dim}");
        let _ = writeln!(out, "waves {}", self.num_waves());
        match self.seed {
            Some(s) => {
                let _ = writeln!(out, "seed {s}");
            }
            None => out.push_str("seed none\n"),
        }
        match self.torus_period {
            Some(l) => {
                let _ = writeln!(out, "torus_period {l}");
            }
            None => out.push_str("torus_period none\n"),
        }
        for (w, p) in self.frequencies.iter().zip(&self.phases) {
            for wi in &w[..dim] {
                let _ = write!(out, "{wi:?} ");
            }
            let _ = writeln!(out, "{p:?}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut rows: Vec<(usize, &str)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let first = line.split_whitespace().next().unwrap_or_default();
            if first.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
                let value = line[first.len()..].trim();
                header.insert(first, (lineno + 1, value));
            } else {
                rows.push((lineno + 1, line));
            }
        }
        let get = |key: &str| {
            header.get(key).copied().ok_or(Error::Parse { line: 0, message: format!("missing header `{key}`") })
        };
        let parse_err = |line: usize, message: String| Error::Parse { line, message };

        let (ln, kind) = get("kind")?;
        let kind = CovarianceKind::from_name(kind).ok_or_else(|| parse_err(ln, format!("unknown kind `{kind}`")))?;
        let (ln, ls) = get("length_scale")?;
        let ls: f64 = ls.parse().map_err(|e| parse_err(ln, format!("{e}")))?;
        let (ln, dim) = get("dim")?;
        let dim: usize = dim.parse().map_err(|e| parse_err(ln, format!("{e}")))?;
        let (ln, k) = get("waves")?;
        let k: usize = k.parse().map_err(|e| parse_err(ln, format!("{e}")))?;
        let (ln, seed) = get("seed")?;
        let seed = match seed {
            "none" => None,
            s => Some(s.parse::<u64>().map_err(|e| parse_err(ln, format!("{e}")))?),
        };
        let (ln, period) = get("torus_period")?;
        let period = match period {
            "none" => None,
            s => Some(s.parse::<f64>().map_err(|e| parse_err(ln, format!("{e}")))?),
        };
        let model = CovarianceModel::new(kind, ls, dim)?;
        if rows.len() != k {
            return Err(parse_err(0, format!("header declares {k} waves, found {} rows", rows.len())));
        }
        let mut freqs = Vec::with_capacity(k);
        let mut phases = Vec::with_capacity(k);
        for (ln, row) in rows {
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| parse_err(ln, format!("`{s}`: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != dim + 1 {
                return Err(parse_err(ln, format!("expected {} numbers, found {}", dim + 1, vals.len())));
            }
            freqs.push(vals[..dim].to_vec());
            phases.push(vals[dim]);
        }
        let mut field = Self::from_waves(&model, &freqs, &phases, period)?;
        field.seed = seed;
        Ok(field)
    }

    fn jet_fixed<const N: usize>(&self, t: &[f64]) -> FieldJet {
        let mut x = [0.0; N];
        x.copy_from_slice(&t[..N]);
        let mut value = 0.0;
        let mut grad = [0.0; N];
        let mut hess = [[0.0; N]; N];
        for w in &self.waves {
            let mut theta = w.phase;
            for i in 0..N {
                theta += w.freq[i] * x[i];
            }
            let (s, c) = theta.sin_cos();
            let (as_, ac) = (w.amp * s, w.amp * c);
            value += ac;
            for i in 0..N {
                grad[i] -= as_ * w.freq[i];
                let aci = ac * w.freq[i];
                for j in i..N {
                    hess[i][j] -= aci * w.freq[j];
                }
            }
        }
        let gradient = DVector::from_column_slice(&grad);
        let hessian = DMatrix::from_fn(N, N, |i, j| if i <= j { hess[i][j] } else { hess[j][i] });
        FieldJet { value, gradient, hessian }
    }
}

fn validate_period(torus_period: Option<f64>) -> Result<()> {
    match torus_period {
        Some(l) if !(l > 0.0 && l.is_finite()) => {
            Err(Error::invalid(format!("torus period must be positive, got {l}")))
        }
        _ => Ok(()),
    }
}

/// Combines waves with equal lattice frequency `±k` into one cosine:
/// `Σ_j a cos(θ + φ_j) = Re(e^{iθ} Σ_j a e^{iφ_j})`.
fn merge_lattice_waves(dim: usize, freqs: &[[f64; 3]], phases: &[f64], amp: f64, period: f64) -> Vec<Wave> {
    let step = TAU / period;
    let mut groups: BTreeMap<[i64; 3], (f64, f64)> = BTreeMap::new();
    for (w, &phi) in freqs.iter().zip(phases) {
        let mut key = [0i64; 3];
        for i in 0..dim {
            key[i] = (w[i] / step).round() as i64;
        }
        // Canonical sign: first nonzero lattice component positive.
        let flip = key.iter().find(|&&k| k != 0).is_some_and(|&k| k < 0);
        let phi = if flip {
            for k in key.iter_mut() {
                *k = -*k;
            }
            -phi
        } else {
            phi
        };
        let entry = groups.entry(key).or_insert((0.0, 0.0));
        entry.0 += amp * phi.cos();
        entry.1 += amp * phi.sin();
    }
    groups
        .into_iter()
        .filter_map(|(key, (re, im))| {
            let a = re.hypot(im);
            if a == 0.0 {
                return None;
            }
            let mut freq = [0.0; 3];
            for i in 0..dim {
                freq[i] = key[i] as f64 * step;
            }
            Some(Wave { freq, amp: a, phase: im.atan2(re).rem_euclid(2.0 * PI) })
        })
        .collect()
}

impl ScalarField for SpectralField {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn jet(&self, t: &[f64]) -> FieldJet {
        assert_eq!(t.len(), self.dim(), "point dimension");
        match self.dim() {
            1 => self.jet_fixed::<1>(t),
            2 => self.jet_fixed::<2>(t),
            _ => self.jet_fixed::<3>(t),
        }
    }

    fn value(&self, t: &[f64]) -> f64 {
        let dim = self.dim();
        self.waves
            .iter()
            .map(|w| {
                let theta = w.phase + (0..dim).map(|i| w.freq[i] * t[i]).sum::<f64>();
                w.amp * theta.cos()
            })
            .sum()
    }

    fn scales(&self) -> FieldScales {
        let lambda = -2.0 * self.model.rho_prime_zero();
        let b = 4.0 * self.model.rho_second_zero();
        FieldScales {
            gradient: lambda.sqrt(),
            hessian: (3.0 * b).sqrt(),
            wavenumber: vec![3.0 / self.model.length_scale(); self.dim()],
        }
    }
}
