//! Experiment configuration files.
//!
//! A config is one JSON object whose schema depends on the subcommand.
//! Unknown keys are rejected; errors carry the path of the offending key,
//! and missing required keys are listed together.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use weakdep::concentration::TalagrandVariant;
use weakdep::measures::{MeasureSpec, Metric, PathMeasureSpec};
use weakdep::oracle::{BoundKind, OracleParams, RegressionModel};
use weakdep::processes::{Innovation, PairSampler, ProcessSpec};
use weakdep::transport::SolverConfig;

use crate::CliError;

/// A law on `E` or a Markov path law on `E^n`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum LawSpec {
    Single(MeasureSpec),
    Path(PathMeasureSpec),
}

fn two() -> f64 {
    2.0
}

fn one() -> f64 {
    1.0
}

fn hamming() -> Metric {
    Metric::Hamming
}

fn slack() -> f64 {
    3.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    pub p: LawSpec,
    pub q: LawSpec,
    #[serde(default = "two")]
    pub exponent: f64,
    #[serde(default = "hamming")]
    pub metric: Metric,
    /// Restrict the infimum to Markov couplings.
    #[serde(default)]
    pub markov: bool,
    /// Constant of the inequality the cost is compared with.
    #[serde(default = "one")]
    pub constant: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaSource {
    /// Exact coefficients from the kernels of a finite path law.
    Kernel {
        measure: PathMeasureSpec,
        #[serde(default = "hamming")]
        metric: Metric,
        #[serde(default = "hamming")]
        perturbation_metric: Metric,
    },
    /// Exact total-variation coefficients.
    Tv { measure: PathMeasureSpec },
    /// Monte-Carlo estimates for a simulated process.
    Simulated {
        process: ProcessSpec,
        horizon: usize,
        #[serde(default = "default_replicates")]
        replicates: usize,
        #[serde(default)]
        pairs: PairSampler,
    },
}

fn default_replicates() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaConfig {
    pub source: GammaSource,
    #[serde(default = "two")]
    pub exponent: f64,
    /// Base transport constant; when set, the theorem constant is reported.
    #[serde(default)]
    pub base_constant: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WtiConfig {
    pub measure: PathMeasureSpec,
    #[serde(default = "two")]
    pub exponent: f64,
    #[serde(default = "hamming")]
    pub metric: Metric,
    #[serde(default = "hamming")]
    pub perturbation_metric: Metric,
    #[serde(default = "one")]
    pub base_constant: f64,
    /// Use this constant instead of the theorem constant.
    #[serde(default)]
    pub constant: Option<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

fn default_trials() -> usize {
    500
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualCase {
    pub f: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lambda: f64,
    #[serde(default)]
    pub inverted: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualConfig {
    pub measure: MeasureSpec,
    pub cases: Vec<DualCase>,
    #[serde(default = "one")]
    pub constant: f64,
    #[serde(default = "two")]
    pub exponent: f64,
    #[serde(default = "hamming")]
    pub metric: Metric,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

/// Where Monte-Carlo samples come from.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    /// `dim` iid coordinates.
    Iid { law: Innovation, dim: usize },
    /// A simulated path `(X_1, .., X_length)`, flattened.
    Process {
        process: ProcessSpec,
        length: usize,
        #[serde(default)]
        start: Option<Vec<f64>>,
    },
}

/// A function from the built-in separately convex battery, optionally
/// rescaled (negative factors give concave functions).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub name: String,
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub sampler: SamplerSpec,
    pub function: FunctionSpec,
    #[serde(default = "one")]
    pub constant: f64,
    pub samples: usize,
    #[serde(default = "slack")]
    pub slack: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

/// Membership rule for the set `A`.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    SumAtMost { threshold: f64 },
    SumAtLeast { threshold: f64 },
}

impl SetSpec {
    pub fn contains(&self, x: &[f64]) -> bool {
        let s: f64 = x.iter().sum();
        match *self {
            SetSpec::SumAtMost { threshold } => s <= threshold,
            SetSpec::SumAtLeast { threshold } => s >= threshold,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TalagrandConfig {
    pub sampler: SamplerSpec,
    pub set: SetSpec,
    pub variant: TalagrandVariant,
    #[serde(default = "one")]
    pub constant: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_hull_cap")]
    pub hull_cap: usize,
    /// Enumerate the product space exactly (iid discrete laws only).
    #[serde(default)]
    pub exact: bool,
    #[serde(default = "slack")]
    pub slack: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

fn default_samples() -> usize {
    100_000
}

fn default_hull_cap() -> usize {
    200
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectationSpec {
    pub beta: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub model: RegressionModel,
    pub n: usize,
    pub params: OracleParams,
    #[serde(default = "default_bound")]
    pub bound: BoundKind,
    #[serde(default = "default_trials")]
    pub replications: usize,
    /// Also check the expectation inequality.
    #[serde(default)]
    pub expectation: Option<ExpectationSpec>,
    #[serde(default = "slack")]
    pub slack: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

fn default_bound() -> BoundKind {
    BoundKind::Nonexact
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub process: ProcessSpec,
    pub length: usize,
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

/// Required top-level keys per schema, for error messages.
pub fn required_keys(schema: &str) -> &'static [&'static str] {
    match schema {
        "transport" => &["p", "q"],
        "gamma" => &["source"],
        "wti" => &["measure"],
        "dual" => &["measure", "cases"],
        "tsirelson" | "poincare" => &["sampler", "function", "samples"],
        "talagrand" => &["sampler", "set", "variant"],
        "oracle" => &["model", "n", "params"],
        "simulate" => &["process", "length"],
        _ => &[],
    }
}

/// Read and validate a config file against the schema `schema`.
pub fn load<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = if text.trim().is_empty() { "{}" } else { text.as_str() };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: invalid JSON: {e}", path.display())))?;
    let object = value
        .as_object()
        .ok_or_else(|| CliError::Config("config must be a JSON object".into()))?;
    let missing: Vec<&str> = required_keys(schema).iter().copied().filter(|k| !object.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(CliError::Config(format!(
            "schema error ({schema}): missing required keys: {}",
            missing.join(", ")
        )));
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let at = e.path().to_string();
        CliError::Config(format!("schema error ({schema}) at `{at}`: {}", e.inner()))
    })
}
