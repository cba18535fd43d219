//! Per-command configuration records and run provenance.
//!
//! A command's parameters come from, in increasing precedence: field
//! defaults, the `--config` JSON object, and explicit flags. The seed falls
//! back to `$GT_SEED` and then 0 when neither source sets it. The resolved
//! record is embedded in every output file together with its SHA-256.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gt_core::bp::{BpOptions, InitScheme};
use gt_core::channel::{ModelParams, SamplingMode};
use gt_core::decision::RiskParams;
use gt_core::popdyn::{Degrees, PdConfig, PdInit};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

pub const SEED_ENV: &str = "GT_SEED";

fn env_seed() -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn load_object(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::Usage(format!("{}: configuration must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

/// Merges defaults, the optional config file and flag overrides into `C`.
pub fn resolve<C, A>(file: Option<&Path>, flags: &A, seed: Option<u64>) -> CliResult<C>
where
    C: DeserializeOwned + Serialize,
    A: Serialize,
{
    let mut merged = match file {
        Some(path) => load_object(path)?,
        None => Map::new(),
    };
    let overrides = serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Value::Object(map) = overrides {
        merged.extend(map.into_iter().filter(|(_, v)| !v.is_null()));
    }
    if let Some(seed) = seed {
        merged.insert("seed".into(), seed.into());
    }
    if !merged.contains_key("seed") {
        merged.insert("seed".into(), env_seed()?.into());
    }
    let given: Vec<String> = merged.keys().cloned().collect();
    let config: C =
        serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    // flattened records cannot deny unknown fields, so compare key sets
    if let Ok(Value::Object(known)) = serde_json::to_value(&config) {
        if let Some(key) = given.iter().find(|k| !known.contains_key(*k)) {
            return Err(CliError::Usage(format!("unknown configuration key {key:?}")));
        }
    }
    Ok(config)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance block written at the top of every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: Value,
    /// SHA-256 of each input file, keyed by role.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, String>,
}

impl Meta {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64, inputs: BTreeMap<String, String>) -> Self {
        let config = serde_json::to_value(config).unwrap_or(Value::Null);
        let canonical = serde_json::json!({ "config": config, "inputs": inputs });
        Self {
            tool: format!("gt {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            seed,
            config_hash: sha256_hex(canonical.to_string().as_bytes()),
            config,
            inputs,
        }
    }
}

fn default_n() -> usize {
    1000
}
fn default_m() -> usize {
    500
}
fn default_k() -> usize {
    10
}
fn one() -> usize {
    1
}
fn half() -> f64 {
    0.5
}
fn default_eps() -> f64 {
    1e-12
}
fn default_max_iter() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BpConfig {
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub damping: f64,
    #[serde(default = "default_init")]
    pub init: InitScheme,
}

fn default_init() -> InitScheme {
    InitScheme::Prior
}

impl BpConfig {
    pub fn options(&self, seed: u64) -> BpOptions {
        BpOptions {
            eps: self.eps,
            max_iter: self.max_iter,
            damping: self.damping,
            init: self.init,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub seed: u64,
}

fn default_sampling() -> SamplingMode {
    SamplingMode::Bernoulli
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    pub theta: f64,
    pub p_tp: f64,
    pub p_fp: f64,
    #[serde(default = "one")]
    pub samples: usize,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingMode,
    #[serde(default = "half")]
    pub lambda_fn: f64,
    #[serde(default = "half")]
    pub lambda_fp: f64,
    #[serde(flatten)]
    pub bp: BpConfig,
    pub seed: u64,
}

impl SimulateConfig {
    pub fn model(&self) -> CliResult<ModelParams> {
        Ok(ModelParams::new(self.theta, self.p_tp, self.p_fp)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Bp,
    Exact,
}

fn default_engine() -> Engine {
    Engine::Bp
}
fn default_cap() -> usize {
    gt_core::oracle::DEFAULT_CAP
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferConfig {
    pub design: PathBuf,
    pub results: PathBuf,
    pub theta: f64,
    pub p_tp: f64,
    pub p_fp: f64,
    #[serde(default = "default_engine")]
    pub engine: Engine,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(flatten)]
    pub bp: BpConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Marginal,
    BayesFactor,
}

fn default_rule() -> Rule {
    Rule::Marginal
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecideConfig {
    pub marginals: PathBuf,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    pub theta: f64,
    #[serde(default = "half")]
    pub lambda_fn: f64,
    #[serde(default = "half")]
    pub lambda_fp: f64,
    #[serde(default)]
    pub cutoff: Option<f64>,
    #[serde(default = "default_rule")]
    pub rule: Rule,
    pub seed: u64,
}

impl DecideConfig {
    pub fn risk(&self) -> CliResult<RiskParams> {
        Ok(RiskParams::new(self.lambda_fn, self.lambda_fp)?)
    }
}

fn default_column() -> String {
    "marginal".into()
}
fn default_grid_points() -> usize {
    gt_core::metrics::DEFAULT_GRID_POINTS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocConfig {
    pub truth: PathBuf,
    pub scores: PathBuf,
    #[serde(default = "default_column")]
    pub column: String,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub theta: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Desk,
}

/// Shared population-dynamics settings. Unset sizes are filled from the
/// preset by [`PdRunConfig::finalize`], so the recorded config is complete.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdRunConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub c: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub n_pop: Option<usize>,
    #[serde(default)]
    pub sweeps: Option<usize>,
    #[serde(default)]
    pub n_eval: Option<usize>,
    #[serde(default)]
    pub bins: Option<usize>,
    #[serde(default)]
    pub init: Option<PdInit>,
}

impl PdRunConfig {
    pub fn finalize(&mut self, default_preset: Preset, seed: u64) -> CliResult<(Degrees, PdConfig)> {
        let degrees = match (self.c, self.alpha) {
            (Some(c), Some(alpha)) if (alpha * self.k as f64 - c as f64).abs() > 1e-9 => {
                return Err(CliError::Usage(format!("c = {c} disagrees with alpha * k = {}", alpha * self.k as f64)))
            }
            (Some(c), _) => Degrees::new(self.k, c)?,
            (None, alpha) => Degrees::from_alpha(alpha.unwrap_or(0.5), self.k)?,
        };
        self.c = Some(degrees.c);
        self.alpha = Some(degrees.c as f64 / degrees.k as f64);
        let preset = *self.preset.get_or_insert(default_preset);
        let base = match preset {
            Preset::Full => PdConfig::full(seed),
            Preset::Desk => PdConfig::desk(seed),
        };
        let config = PdConfig {
            n_pop: *self.n_pop.get_or_insert(base.n_pop),
            sweeps: *self.sweeps.get_or_insert(base.sweeps),
            n_eval: *self.n_eval.get_or_insert(base.n_eval),
            histogram_bins: *self.bins.get_or_insert(base.histogram_bins),
            init: *self.init.get_or_insert(base.init),
            seed,
        };
        config.validate()?;
        Ok((degrees, config))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdCommandConfig {
    pub theta: f64,
    pub p_tp: f64,
    pub p_fp: f64,
    #[serde(flatten)]
    pub run: PdRunConfig,
    pub seed: u64,
}

fn p_tp_min() -> f64 {
    0.5
}
fn p_tp_max() -> f64 {
    1.0
}
fn p_fp_max() -> f64 {
    0.5
}
fn grid_points() -> usize {
    11
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub theta: f64,
    #[serde(default = "p_tp_min")]
    pub p_tp_min: f64,
    #[serde(default = "p_tp_max")]
    pub p_tp_max: f64,
    #[serde(default = "grid_points")]
    pub p_tp_points: usize,
    #[serde(default)]
    pub p_fp_min: f64,
    #[serde(default = "p_fp_max")]
    pub p_fp_max: f64,
    #[serde(default = "grid_points")]
    pub p_fp_points: usize,
    #[serde(flatten)]
    pub run: PdRunConfig,
    pub seed: u64,
}

/// `points` evenly spaced values from `lo` to `hi`, both included.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| {
                if i + 1 == points {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (points - 1) as f64
                }
            })
            .collect(),
    }
}

fn validate_n() -> usize {
    12
}
fn validate_m() -> usize {
    4
}
fn validate_k() -> usize {
    3
}
fn validate_instances() -> usize {
    10
}
fn validate_tolerance() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidateConfig {
    #[serde(default = "validate_n")]
    pub n: usize,
    #[serde(default = "validate_m")]
    pub m: usize,
    #[serde(default = "validate_k")]
    pub k: usize,
    #[serde(default = "validate_instances")]
    pub instances: usize,
    pub theta: f64,
    pub p_tp: f64,
    pub p_fp: f64,
    #[serde(default = "validate_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(flatten)]
    pub bp: BpConfig,
    pub seed: u64,
}

fn compare_n() -> usize {
    50_000
}
fn compare_theta() -> f64 {
    0.1
}
fn compare_p_tp() -> f64 {
    0.9
}
fn compare_p_fp() -> f64 {
    0.05
}
fn compare_iterations() -> usize {
    6
}
fn compare_n_pop() -> usize {
    1_000_000
}
fn compare_bins() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareConfig {
    #[serde(default = "compare_n")]
    pub n: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub c: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "compare_theta")]
    pub theta: f64,
    #[serde(default = "compare_p_tp")]
    pub p_tp: f64,
    #[serde(default = "compare_p_fp")]
    pub p_fp: f64,
    #[serde(default = "compare_iterations")]
    pub iterations: usize,
    #[serde(default = "compare_n_pop")]
    pub n_pop: usize,
    #[serde(default = "compare_bins")]
    pub bins: usize,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingMode,
    pub seed: u64,
}

impl CompareConfig {
    pub fn degrees(&mut self) -> CliResult<Degrees> {
        let degrees = match self.c {
            Some(c) => Degrees::new(self.k, c)?,
            None => Degrees::from_alpha(self.alpha.unwrap_or(0.5), self.k)?,
        };
        self.c = Some(degrees.c);
        self.alpha = Some(degrees.c as f64 / degrees.k as f64);
        Ok(degrees)
    }
}
