//! Report structure and the CSV tables written next to it.

use std::fmt::Write as _;
use std::path::Path;

use critfield::kac_rice::threshold_label;
use critfield::stats::Estimate;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

impl Verdict {
    pub fn from_checks(checks: &[Check]) -> Self {
        if checks.iter().all(|c| c.pass) {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

/// One tolerance rule applied to one quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    /// Combined standard error, when the rule is statistical.
    pub std_error: Option<f64>,
    /// `|observed - expected| / std_error`, or the rule's own statistic.
    pub statistic: f64,
    /// Human-readable rule, e.g. `"z < 3"`.
    pub rule: String,
    pub pass: bool,
}

impl Check {
    /// Passes when the two sides agree within `k` combined standard errors.
    pub fn within_se(name: impl Into<String>, observed: f64, se_obs: f64, expected: f64, se_exp: f64, k: f64) -> Self {
        let z = critfield::stats::z_score(observed, se_obs, expected, se_exp);
        Self {
            name: name.into(),
            observed,
            expected,
            std_error: Some(se_obs.hypot(se_exp)),
            statistic: z,
            rule: format!("z < {k}"),
            pass: z < k,
        }
    }

    /// Passes when `observed == expected` exactly.
    pub fn exact(name: impl Into<String>, observed: f64, expected: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            expected,
            std_error: None,
            statistic: (observed - expected).abs(),
            rule: "equal".into(),
            pass: observed == expected,
        }
    }

    pub fn at_most(name: impl Into<String>, observed: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            expected: limit,
            std_error: None,
            statistic: observed,
            rule: format!("<= {limit}"),
            pass: observed <= limit,
        }
    }

    pub fn at_least(name: impl Into<String>, observed: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            expected: limit,
            std_error: None,
            statistic: observed,
            rule: format!(">= {limit}"),
            pass: observed >= limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub replicate: usize,
    pub seed: u64,
    pub reason: String,
}

/// Mean of a per-replicate quantity for one field, index and threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountSummary {
    pub field: String,
    pub index: usize,
    pub u: String,
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl CountSummary {
    pub fn new(field: &str, index: usize, u: f64, est: &Estimate) -> Self {
        Self { field: field.into(), index, u: threshold_label(u), mean: est.mean, std_error: est.std_error, n: est.n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub experiment: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: String,
    pub replicates: usize,
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
    pub records: Vec<Value>,
    pub aggregates: Vec<CountSummary>,
    pub extra: Value,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
}

/// A finished experiment: the report plus every table to be written.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: Report,
    /// `(file name, contents)` in write order; always includes `counts.csv`
    /// and `heights.csv`.
    pub files: Vec<(String, String)>,
}

impl ExperimentOutput {
    pub fn report_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.report).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report_json())?;
        for (name, contents) in &self.files {
            std::fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }
}

/// `replicate_id,seed,field,index,u,count`.
#[derive(Debug, Default)]
pub struct CountsTable(String);

impl CountsTable {
    pub fn new() -> Self {
        Self("replicate_id,seed,field,index,u,count\n".into())
    }

    pub fn push(&mut self, replicate: usize, seed: u64, field: &str, index: usize, u: f64, count: usize) {
        let _ = writeln!(self.0, "{replicate},{seed},{field},{index},{},{count}", threshold_label(u));
    }

    pub fn finish(self) -> String {
        self.0
    }
}

/// `replicate_id,seed,field,index,height`.
#[derive(Debug, Default)]
pub struct HeightsTable(String);

impl HeightsTable {
    pub fn new() -> Self {
        Self("replicate_id,seed,field,index,height\n".into())
    }

    pub fn push(&mut self, replicate: usize, seed: u64, field: &str, index: usize, height: f64) {
        let _ = writeln!(self.0, "{replicate},{seed},{field},{index},{height:.17e}");
    }

    pub fn finish(self) -> String {
        self.0
    }
}
