//! Experiment configuration files.
//!
//! The file format is TOML: named sections of `key = value` pairs. Floats are
//! written in shortest round-trip form (and `-inf`/`inf` are native TOML
//! values), so a config survives a write/read cycle bit for bit.

use std::path::{Path, PathBuf};

use critfield::crit::Domain;
use critfield::field::{CovarianceKind, CovarianceModel, Diffeomorphism, WarpTerm};
use critfield::manifold::Ellipsoid;
use nalgebra::{DMatrix, Rotation3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid config: {0}")]
    Model(#[from] critfield::Error),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VerifyDiffeo,
    VerifyAniso,
    HeightDist,
    OracleCompare,
    Manifold,
    Simulate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::VerifyDiffeo => "verify-diffeo",
            Self::VerifyAniso => "verify-aniso",
            Self::HeightDist => "height-dist",
            Self::OracleCompare => "oracle-compare",
            Self::Manifold => "manifold",
            Self::Simulate => "simulate",
        }
    }
}

/// Whether compared fields share one base realization per replicate or are
/// drawn independently.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Shared,
    Independent,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Shared => "shared",
            Self::Independent => "independent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Output directory; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub covariance: CovarianceKind,
    pub length_scale: f64,
    pub dim: usize,
    /// Number of random waves `K`.
    pub waves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainSpec {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
        /// Defaults to 2% of the shortest side.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        margin: Option<f64>,
    },
    /// Cube `[0, period)^N` with periodic boundary.
    Torus { period: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarpTermSpec {
    pub frequency: Vec<f64>,
    #[serde(default)]
    pub phase: f64,
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapSpec {
    Identity,
    /// Row-major matrix.
    Linear { matrix: Vec<Vec<f64>> },
    Diagonal { entries: Vec<f64> },
    /// Planar rotation.
    Rotation { degrees: f64 },
    SineWarp { amplitude: f64, terms: Vec<WarpTermSpec> },
    /// Applied first to last.
    Composition { maps: Vec<MapSpec> },
}

impl MapSpec {
    pub fn build(&self, dim: usize) -> Result<Diffeomorphism, ConfigError> {
        let map = match self {
            MapSpec::Identity => Diffeomorphism::identity(dim)?,
            MapSpec::Linear { matrix } => {
                if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
                    return Err(invalid(format!("linear map must be {dim}×{dim}")));
                }
                Diffeomorphism::linear(DMatrix::from_fn(dim, dim, |i, j| matrix[i][j]))?
            }
            MapSpec::Diagonal { entries } => Diffeomorphism::diagonal(entries)?,
            MapSpec::Rotation { degrees } => Diffeomorphism::rotation_2d(*degrees)?,
            MapSpec::SineWarp { amplitude, terms } => Diffeomorphism::sine_warp(
                *amplitude,
                terms
                    .iter()
                    .map(|t| WarpTerm { frequency: t.frequency.clone(), phase: t.phase, direction: t.direction.clone() })
                    .collect(),
            )?,
            MapSpec::Composition { maps } => {
                Diffeomorphism::compose(maps.iter().map(|m| m.build(dim)).collect::<Result<_, _>>()?)?
            }
        };
        if map.dim() != dim {
            return Err(invalid(format!("map acts on R^{} but the model is {dim}-dimensional", map.dim())));
        }
        Ok(map)
    }
}

fn default_u() -> Vec<f64> {
    vec![f64::NEG_INFINITY]
}

fn default_tol_loc() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    /// Non-decreasing grid of heights `u`.
    #[serde(default = "default_u")]
    pub u: Vec<f64>,
    /// Matching distance for critical-point correspondence.
    #[serde(default = "default_tol_loc")]
    pub tol_loc: f64,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        Self { u: default_u(), tol_loc: default_tol_loc() }
    }
}

fn default_samples() -> usize {
    1_000_000
}

fn default_height_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    /// Matrix samples for count densities.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Matrix samples for height distributions.
    #[serde(default = "default_height_samples")]
    pub height_samples: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { samples: default_samples(), height_samples: default_height_samples() }
    }
}

fn one() -> f64 {
    1.0
}

fn three() -> f64 {
    3.0
}

fn yes() -> bool {
    true
}

fn default_seeds_per_face() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    /// Multiplies the default grid resolution.
    #[serde(default = "one")]
    pub resolution_scale: f64,
    /// Newton starts only from nodes whose Newton step is within this many
    /// grid spacings.
    #[serde(default = "three")]
    pub seed_screen: f64,
    /// Start Newton from every node instead.
    #[serde(default)]
    pub exhaustive_seeding: bool,
    #[serde(default = "yes")]
    pub check_refinement: bool,
    #[serde(default = "default_seeds_per_face")]
    pub seeds_per_face: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            resolution_scale: 1.0,
            seed_screen: 3.0,
            exhaustive_seeding: false,
            check_refinement: true,
            seeds_per_face: default_seeds_per_face(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSection {
    pub semi_axes: [f64; 3],
    /// Euler angles (roll, pitch, yaw) of the principal axes.
    #[serde(default)]
    pub rotation_degrees: [f64; 3],
    /// Quads per face edge in the mesh dump of replicate 0; 0 disables it.
    #[serde(default)]
    pub mesh_resolution: usize,
}

impl ManifoldSection {
    pub fn ellipsoid(&self) -> Result<Ellipsoid, ConfigError> {
        let [r, p, y] = self.rotation_degrees.map(f64::to_radians);
        let rot = Rotation3::from_euler_angles(r, p, y).into_inner();
        Ok(Ellipsoid::with_rotation(self.semi_axes, rot)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSpec>,
    #[serde(default)]
    pub thresholds: ThresholdSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifold: Option<ManifoldSection>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// SHA-256 of the canonical TOML form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.experiment.out = None;
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn model(&self) -> Result<CovarianceModel, ConfigError> {
        Ok(CovarianceModel::new(self.model.covariance, self.model.length_scale, self.model.dim)?)
    }

    pub fn domain(&self) -> Result<Domain, ConfigError> {
        let dim = self.model.dim;
        let spec = self.domain.as_ref().ok_or_else(|| invalid("missing [domain] section"))?;
        let domain = match spec {
            DomainSpec::Box { lower, upper, margin } => match margin {
                Some(m) => Domain::new_box(lower.clone(), upper.clone(), *m)?,
                None => Domain::box_with_default_margin(lower.clone(), upper.clone())?,
            },
            DomainSpec::Torus { period } => Domain::torus(vec![*period; dim])?,
        };
        if domain.dim() != dim {
            return Err(invalid(format!("domain is {}-dimensional but the model is {dim}-dimensional", domain.dim())));
        }
        Ok(domain)
    }

    pub fn torus_period(&self) -> Option<f64> {
        match self.domain {
            Some(DomainSpec::Torus { period }) => Some(period),
            _ => None,
        }
    }

    /// The configured map, or the identity when there is none.
    pub fn map(&self) -> Result<Diffeomorphism, ConfigError> {
        match &self.map {
            Some(spec) => spec.build(self.model.dim),
            None => Ok(Diffeomorphism::identity(self.model.dim)?),
        }
    }

    /// Checks everything that can be checked without sampling.
    pub fn validate(&self) -> Result<(), ConfigError> {
        use ExperimentKind::*;
        if self.experiment.replicates == 0 {
            return Err(invalid("replicates must be at least 1"));
        }
        if self.model.waves == 0 {
            return Err(invalid("waves must be at least 1"));
        }
        self.model()?;
        let u = &self.thresholds.u;
        if u.is_empty() || u.iter().any(|x| x.is_nan()) || u.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("thresholds.u must be a non-empty, non-decreasing list"));
        }
        if !(self.thresholds.tol_loc > 0.0) {
            return Err(invalid("thresholds.tol_loc must be positive"));
        }
        let s = &self.search;
        if !(s.resolution_scale > 0.0 && s.seed_screen > 0.0) || s.seeds_per_face == 0 {
            return Err(invalid("search parameters must be positive"));
        }
        if self.oracle.samples < 2 || self.oracle.height_samples < 2 {
            return Err(invalid("oracle sample counts must be at least 2"));
        }
        let kind = self.experiment.kind;
        if kind == Manifold {
            if self.model.dim != 3 {
                return Err(invalid("manifold experiments need a three-dimensional model"));
            }
            self.manifold.as_ref().ok_or_else(|| invalid("missing [manifold] section"))?.ellipsoid()?;
            return Ok(());
        }
        let domain = self.domain()?;
        let map = self.map()?;
        if matches!(kind, VerifyDiffeo | VerifyAniso | HeightDist) && !matches!(domain, Domain::Box { .. }) {
            return Err(invalid(format!("{} needs a box domain", kind.name())));
        }
        if matches!(kind, VerifyAniso | HeightDist) && !map.is_linear() {
            return Err(invalid(format!("{} needs a linear map", kind.name())));
        }
        if kind == Simulate && self.map.is_some() && matches!(domain, Domain::Torus { .. }) && !is_identity(&map) {
            return Err(invalid("a torus cannot be combined with a coordinate map"));
        }
        if let Domain::Box { lower, upper, .. } = &domain {
            // Probe the Jacobian over the domain so that a degenerate map is
            // reported before any sampling.
            let n: usize = 9;
            let dim = lower.len();
            for k in 0..n.pow(dim as u32) {
                let mut idx = k;
                let t: Vec<f64> = (0..dim)
                    .map(|a| {
                        let i = idx % n;
                        idx /= n;
                        lower[a] + (upper[a] - lower[a]) * i as f64 / (n - 1) as f64
                    })
                    .collect();
                map.check_nonsingular(&t)?;
            }
        }
        Ok(())
    }
}

fn is_identity(map: &Diffeomorphism) -> bool {
    matches!(map, Diffeomorphism::Identity { .. })
}
