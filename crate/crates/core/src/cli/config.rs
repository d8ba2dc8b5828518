//! Experiment configuration: schema, overrides and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::exit::{Crossing, Domain, ExitMethod};
use crate::model::{decouple, DecoupledParams, Model, ModelSpec};
use crate::simulate::{sgd, NoiseScaling, Scheme, SimConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelSpec,
    #[serde(default)]
    pub simulation: SimulationBlock,
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// `SimConfig` fields; each experiment requires the ones it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub n_paths: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
    /// Defaults to the origin.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn one() -> usize {
    1
}

impl Default for SimulationBlock {
    fn default() -> Self {
        SimulationBlock { step: None, horizon: None, n_paths: None, base_seed: 0, x0: None, record_stride: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> String {
    "out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { directory: default_dir(), formats: default_formats() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentBlock {
    Simulate(SimulateOptions),
    Stationary(StationaryOptions),
    Exit(ExitOptions),
    Couple(CoupleOptions),
    Sandwich(SandwichOptions),
    Sweep(SweepOptions),
    Sgdlab(SgdOptions),
}

impl ExperimentBlock {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentBlock::Simulate(_) => "simulate",
            ExperimentBlock::Stationary(_) => "stationary",
            ExperimentBlock::Exit(_) => "exit",
            ExperimentBlock::Couple(_) => "couple",
            ExperimentBlock::Sandwich(_) => "sandwich",
            ExperimentBlock::Sweep(_) => "sweep",
            ExperimentBlock::Sgdlab(_) => "sgdlab",
        }
    }
}

pub const EXPERIMENTS: [(&str, &str); 7] = [
    ("simulate", "trajectories of the continuous scheme, the discrete chain or its interpolation"),
    ("stationary", "tabulated stationary density, normalizing constants, moments, optional KS check"),
    ("exit", "mean exit time by Monte Carlo, double integral and boundary-value oracle"),
    ("couple", "synchronous coupling of two starts and the fitted contraction rate"),
    ("sandwich", "survival of the discrete chain against shrunk and enlarged continuous radii"),
    ("sweep", "eta * ln E[tau] across learning rates against the quasi-potential"),
    ("sgdlab", "minibatch gradient-noise variance of 1-D least squares"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOptions {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub noise_scaling: NoiseScaling,
    #[serde(default)]
    pub interpolation_points: usize,
}

fn default_scheme() -> Scheme {
    Scheme::ContinuousEm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryOptions {
    #[serde(default)]
    pub coord: usize,
    /// Defaults to ten OU standard deviations `sqrt(ησ/(2h))`.
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default = "default_orders")]
    pub moment_orders: Vec<u32>,
    /// Draw this many samples and report the KS statistic.
    #[serde(default)]
    pub n_samples: Option<usize>,
}

fn default_points() -> usize {
    2001
}

fn default_orders() -> Vec<u32> {
    vec![0, 2, 4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitOptions {
    pub domain: Domain,
    /// Defaults to all three in one dimension, Monte Carlo otherwise.
    #[serde(default)]
    pub methods: Option<Vec<ExitMethod>>,
    #[serde(default)]
    pub crossing: Crossing,
    #[serde(default)]
    pub noise_scaling: NoiseScaling,
    /// Defaults to 100 times the quadrature prediction in one dimension.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub abort_if_censored_over: Option<f64>,
    #[serde(default = "default_grid")]
    pub n_grid: usize,
    /// Coarsest of the three grids in the convergence-ratio check; finer
    /// ladders drift into roundoff.
    #[serde(default = "default_richardson_grid")]
    pub richardson_grid: usize,
}

fn default_grid() -> usize {
    20001
}

fn default_richardson_grid() -> usize {
    2001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleOptions {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandwichOptions {
    pub r: f64,
    pub n_intervals: u64,
    pub delta: f64,
    pub delta_bar: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Steps for the oscillation-probability sweep; empty skips it.
    #[serde(default)]
    pub oscillation_steps: Vec<f64>,
    #[serde(default = "default_osc_horizon")]
    pub oscillation_horizon: f64,
}

fn default_substeps() -> usize {
    64
}

fn default_checkpoints() -> usize {
    10
}

fn default_osc_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    pub etas: Vec<f64>,
    pub r: f64,
    pub max_time: f64,
    #[serde(default)]
    pub crossing: Crossing,
    #[serde(default = "half")]
    pub abort_if_censored_over: Option<f64>,
}

fn half() -> Option<f64> {
    Some(0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdOptions {
    pub n_samples: usize,
    pub batch: usize,
    pub noise_std: f64,
    #[serde(default = "sgd::default_grid")]
    pub w_grid: Vec<f64>,
    #[serde(default = "sgd::default_draws")]
    pub n_draws: usize,
    #[serde(default = "sgd::default_w_star")]
    pub w_star: f64,
}

/// Sets `path` (dot separated; numeric segments index arrays) in `root`.
/// The value is parsed as JSON, falling back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config { path: assignment.into(), message: "override must look like KEY=VALUE".into() })?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    set_path(root, key, value)
}

pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    if key.is_empty() {
        return Err(Error::Config { path: key.into(), message: "empty override key".into() });
    }
    let bad = |msg: &str| Error::Config { path: key.into(), message: msg.into() };
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| bad("array segments must be indices"))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| bad(&format!("index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad(&format!("`{part}` is inside a scalar value"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

/// Reads a config, applies overrides, then the `--seed` and `--out` flags.
pub fn load_value(path: &Path, overrides: &[String], seed: Option<u64>, out: Option<&Path>) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config { path: path.display().to_string(), message: format!("cannot read: {e}") })?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: format!("malformed JSON: {e}"),
    })?;
    if !value.is_object() {
        return Err(Error::Config { path: path.display().to_string(), message: "top level must be an object".into() });
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    if let Some(s) = seed {
        set_path(&mut value, "simulation.base_seed", Value::from(s))?;
    }
    if let Some(dir) = out {
        set_path(&mut value, "output.directory", Value::String(dir.display().to_string()))?;
    }
    Ok(value)
}

// Internally tagged enums hide the failing field from the path tracker, so a
// failing model block is re-read through these shapes to locate it.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(dead_code)]
struct FullShape {
    kind: String,
    eta: f64,
    hessian: Vec<Vec<f64>>,
    sigma_g: Vec<Vec<f64>>,
    sigma_h: Vec<Vec<f64>>,
    #[serde(default)]
    w_star: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(dead_code)]
struct DecoupledShape {
    kind: String,
    eta: f64,
    h: Vec<f64>,
    sigma: Vec<f64>,
    rho: Vec<f64>,
}

fn model_field_error(model: &Value) -> Option<Error> {
    fn probe<T: serde::de::DeserializeOwned>(v: &Value) -> Option<Error> {
        serde_path_to_error::deserialize::<_, T>(v.clone()).err().map(|e| Error::Config {
            path: format!("model.{}", e.path()),
            message: e.into_inner().to_string(),
        })
    }
    match model.get("kind").and_then(Value::as_str) {
        Some("full") => probe::<FullShape>(model),
        Some("decoupled") => probe::<DecoupledShape>(model),
        _ => None,
    }
}

pub fn parse(value: Value) -> Result<ExperimentConfig> {
    let model = value.get("model").cloned();
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        if path == "model" {
            if let Some(inner) = model.as_ref().and_then(model_field_error) {
                return inner;
            }
        }
        Error::Config { path, message: e.into_inner().to_string() }
    })?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(Error::Config {
            path: "schema_version".into(),
            message: format!("unsupported version {}, expected {SCHEMA_VERSION}", cfg.schema_version),
        });
    }
    Ok(cfg)
}

const SIM_FIELDS: [&str; 6] = ["step", "horizon", "n_paths", "base_seed", "x0", "record_stride"];

/// Prefixes a validation message with the config block that owns its field.
pub fn locate(e: Error, experiment: &str) -> Error {
    match e {
        Error::InvalidParams(msg) => {
            let field = msg.split([' ', '[']).next().unwrap_or("");
            if SIM_FIELDS.contains(&field) {
                Error::InvalidParams(format!("simulation.{msg}"))
            } else {
                Error::InvalidParams(format!("experiment.{experiment}.{msg}"))
            }
        }
        other => other,
    }
}

pub fn model_error(e: Error) -> Error {
    match e {
        Error::InvalidParams(msg) => Error::InvalidParams(format!("model.{msg}")),
        other => other,
    }
}

fn required<T: Clone>(v: &Option<T>, field: &str, exp: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Config {
        path: format!("simulation.{field}"),
        message: format!("required by the {exp} experiment"),
    })
}

impl ExperimentConfig {
    pub fn build_model(&self) -> Result<Model> {
        self.model.build().map_err(model_error)
    }

    pub fn x0(&self, dim: usize) -> Vec<f64> {
        self.simulation.x0.clone().unwrap_or_else(|| vec![0.0; dim])
    }

    pub fn step(&self) -> Result<f64> {
        required(&self.simulation.step, "step", self.experiment.name())
    }

    pub fn n_paths(&self) -> Result<usize> {
        required(&self.simulation.n_paths, "n_paths", self.experiment.name())
    }

    pub fn sim_config(&self, dim: usize) -> Result<SimConfig> {
        let exp = self.experiment.name();
        let cfg = SimConfig {
            step: self.step()?,
            horizon: required(&self.simulation.horizon, "horizon", exp)?,
            n_paths: self.n_paths()?,
            base_seed: self.simulation.base_seed,
            x0: self.x0(dim),
            record_stride: self.simulation.record_stride,
        };
        cfg.validate(dim).map_err(|e| locate(e, exp))?;
        Ok(cfg)
    }
}

/// Decoupled coefficients of any model (exact in one dimension).
pub fn decoupled(model: &Model) -> Result<DecoupledParams> {
    match model {
        Model::Decoupled(p) => Ok(p.clone()),
        Model::Full(p) => decouple(p).map(|(d, _)| d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_create_and_replace() {
        let mut v = json!({"simulation": {"step": 0.01}, "model": {"h": [1.0, 2.0]}});
        apply_override(&mut v, "simulation.step=0.0005").unwrap();
        apply_override(&mut v, "model.h.1=3").unwrap();
        apply_override(&mut v, "output.directory=runs/a").unwrap();
        assert_eq!(v["simulation"]["step"], json!(0.0005));
        assert_eq!(v["model"]["h"], json!([1.0, 3]));
        assert_eq!(v["output"]["directory"], json!("runs/a"));
        assert!(apply_override(&mut v, "simulation.step.x=1").is_err());
        assert!(apply_override(&mut v, "model.h.7=1").is_err());
        assert!(apply_override(&mut v, "novalue").is_err());
    }

    #[test]
    fn field_paths_in_schema_errors() {
        let v = json!({
            "schema_version": 1,
            "model": {"kind": "decoupled", "eta": 0.1, "h": [1.0], "sigma": [1.0], "rho": "x"},
            "experiment": {"stationary": {}}
        });
        match parse(v) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "model.rho"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn locate_prefixes_owner() {
        let e = locate(Error::InvalidParams("step must be > 0".into()), "exit");
        assert_eq!(e.to_string(), "simulation.step must be > 0");
        let e = locate(Error::InvalidParams("domain must satisfy a < b".into()), "exit");
        assert_eq!(e.to_string(), "experiment.exit.domain must satisfy a < b");
    }
}
