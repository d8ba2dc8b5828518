//! Path generation.
//!
//! All schemes share the Euler–Maruyama update
//! `v_{k+1} = v_k + ε μ(v_k) + √ε σ(v_k) ξ_k`, where `ξ_k` holds normals
//! `k d .. k d + d - 1` of stream `(base_seed, path, Main)`. Paths run in
//! parallel but depend only on their own stream, so results are identical
//! for any thread count.

pub mod sgd;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decouple, DecoupledParams, Model, ModelSpec};
use crate::rng::{Lane, Stream, StreamId};

pub use sgd::{sgd_noise_experiment, SgdLabConfig, SgdLabReport};

/// Paths are declared exploded once any coordinate exceeds this.
pub const OVERFLOW_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub base_seed: u64,
    pub x0: Vec<f64>,
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn one() -> usize {
    1
}

impl SimConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid("step must be > 0"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon must be > 0"));
        }
        if self.step > self.horizon {
            return Err(Error::invalid("step must be <= horizon"));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths must be >= 1"));
        }
        if u32::try_from(self.n_paths).is_err() {
            return Err(Error::invalid("n_paths must fit in 32 bits"));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride must be >= 1"));
        }
        if self.x0.len() != dim {
            return Err(Error::invalid(format!("x0 must have length {dim}")));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x0 must be finite"));
        }
        Ok(())
    }

    /// Number of steps `K = round(T / ε)`.
    pub fn n_steps(&self) -> u64 {
        (self.horizon / self.step).round().max(1.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ContinuousEm,
    FrozenInterpolation,
    DiscreteChain,
}

/// Multiplier of `σ(z_k) ξ_k` in the chain update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScaling {
    /// `√ε`: the chain is the interpolation process at grid times.
    #[default]
    SqrtStep,
    /// `ε`: literal reading of the chain with `ε ε_k` noise.
    Step,
}

impl NoiseScaling {
    pub fn factor(&self, step: f64) -> f64 {
        match self {
            NoiseScaling::SqrtStep => step.sqrt(),
            NoiseScaling::Step => step,
        }
    }
}

/// Result of the `{ηρ_i, ρ_i} ≤ h_i ≤ 1/ε` check for the discretization
/// bounds. Reported, never enforced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub satisfied: bool,
    pub warnings: Vec<String>,
}

pub fn check_discretization_assumption(model: &Model, step: f64) -> AssumptionCheck {
    let dp = match model {
        Model::Decoupled(p) => p.clone(),
        Model::Full(p) => match decouple(p) {
            Ok((dp, _)) => dp,
            Err(e) => {
                return AssumptionCheck {
                    satisfied: false,
                    warnings: vec![format!("assumption not checkable: {e}")],
                }
            }
        },
    };
    let mut warnings = Vec::new();
    for i in 0..dp.dim() {
        let (h, rho) = (dp.h[i], dp.rho[i]);
        let tag = if dp.dim() == 1 { String::new() } else { format!(" (coordinate {i})") };
        if dp.eta * rho > h {
            warnings.push(format!("assumption ηρ ≤ h violated{tag}: {} > {h}", dp.eta * rho));
        }
        if rho > h {
            warnings.push(format!("assumption ρ ≤ h violated{tag}: {rho} > {h}"));
        }
        if h > 1.0 / step {
            warnings.push(format!("assumption h ≤ 1/ε violated{tag}: {h} > {}", 1.0 / step));
        }
    }
    AssumptionCheck { satisfied: warnings.is_empty(), warnings }
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchMeta {
    pub scheme: Scheme,
    pub noise_scaling: NoiseScaling,
    pub model: ModelSpec,
    pub config: SimConfig,
    pub n_steps: u64,
    /// Stream of path `p` is `(base_seed, p, lane)`.
    pub seeds: Vec<StreamId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interpolation_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumption: Option<AssumptionCheck>,
}

/// Recorded paths, stored path-major: value `i` of record `t` on path `p`
/// is `values[(p * times.len() + t) * dim + i]`.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Grid step index of each record (interpolation points carry the
    /// index of the interval they sit in).
    pub steps: Vec<u64>,
    pub values: Vec<f64>,
    pub meta: BatchMeta,
}

impl TrajectoryBatch {
    pub fn n_paths(&self) -> usize {
        self.meta.config.n_paths
    }

    pub fn n_records(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, path: usize, record: usize) -> &[f64] {
        let o = (path * self.times.len() + record) * self.dim;
        &self.values[o..o + self.dim]
    }

    pub fn path(&self, path: usize) -> &[f64] {
        let m = self.times.len() * self.dim;
        &self.values[path * m..(path + 1) * m]
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.state(path, self.times.len() - 1)
    }

    /// Coordinate `i` of every path at record `t`.
    pub fn marginal(&self, record: usize, i: usize) -> Vec<f64> {
        (0..self.n_paths()).map(|p| self.state(p, record)[i]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,step,time");
        for i in 0..self.dim {
            s.push_str(&format!(",coord{i}"));
        }
        s.push('\n');
        for p in 0..self.n_paths() {
            for t in 0..self.times.len() {
                s.push_str(&format!("{p},{},{:e}", self.steps[t], self.times[t]));
                for v in self.state(p, t) {
                    s.push_str(&format!(",{v:e}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// One Euler–Maruyama update with reusable scratch space.
pub(crate) struct Stepper<'a> {
    model: &'a Model,
    step: f64,
    noise: f64,
    drift: Vec<f64>,
    kick: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(model: &'a Model, step: f64, noise: f64) -> Self {
        let d = model.dim();
        Stepper { model, step, noise, drift: vec![0.0; d], kick: vec![0.0; d] }
    }

    #[inline]
    pub(crate) fn advance(&mut self, v: &mut [f64], xi: &[f64]) {
        match self.model {
            Model::Decoupled(p) => {
                for i in 0..v.len() {
                    let x = v[i];
                    v[i] = x - self.step * p.h[i] * x + self.noise * p.diffusion_sq_at(i, x).sqrt() * xi[i];
                }
            }
            Model::Full(_) => {
                self.model.drift_into(v, &mut self.drift);
                self.model.diffuse_into(v, xi, &mut self.kick);
                for i in 0..v.len() {
                    v[i] += self.step * self.drift[i] + self.noise * self.kick[i];
                }
            }
        }
    }
}

#[inline]
pub(crate) fn exploded(v: &[f64]) -> bool {
    v.iter().any(|x| !(x.abs() <= OVERFLOW_LIMIT))
}

#[inline]
pub(crate) fn fill_normals(stream: &mut Stream, first: u64, out: &mut [f64]) {
    for (i, z) in out.iter_mut().enumerate() {
        *z = stream.normal(first + i as u64);
    }
}

fn record_layout(cfg: &SimConfig, interp: usize) -> (Vec<f64>, Vec<u64>) {
    let k_total = cfg.n_steps();
    let stride = cfg.record_stride as u64;
    let mut times = Vec::new();
    let mut steps = Vec::new();
    for k in 0..=k_total {
        if k % stride == 0 || k == k_total {
            times.push(k as f64 * cfg.step);
            steps.push(k);
            if interp > 0 && k < k_total {
                for j in 1..interp {
                    times.push((k as f64 + j as f64 / interp as f64) * cfg.step);
                    steps.push(k);
                }
            }
        }
    }
    (times, steps)
}

fn run_paths<F>(cfg: &SimConfig, per_path: usize, body: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let mut values = vec![0.0; cfg.n_paths * per_path];
    let results: Vec<Result<()>> = values
        .par_chunks_mut(per_path)
        .enumerate()
        .map(|(p, out)| body(p, out))
        .collect();
    // Report the lowest failing path so errors do not depend on scheduling.
    for r in results {
        r?;
    }
    Ok(values)
}

fn seeds(cfg: &SimConfig, lane: Lane) -> Vec<StreamId> {
    (0..cfg.n_paths)
        .map(|p| StreamId { base_seed: cfg.base_seed, path: p as u32, lane: lane as u32 })
        .collect()
}

fn simulate_grid(model: &Model, cfg: &SimConfig, noise: NoiseScaling, interp: usize, scheme: Scheme) -> Result<TrajectoryBatch> {
    cfg.validate(model.dim())?;
    let d = model.dim();
    let (times, steps) = record_layout(cfg, interp);
    let per_path = times.len() * d;
    let k_total = cfg.n_steps();
    let stride = cfg.record_stride as u64;
    let noise_factor = noise.factor(cfg.step);
    let values = run_paths(cfg, per_path, |p, out| {
        let mut stream = Stream::new(cfg.base_seed, p as u32, Lane::Main);
        let mut interp_stream = Stream::new(cfg.base_seed, p as u32, Lane::Interp);
        let mut stepper = Stepper::new(model, cfg.step, noise_factor);
        let mut v = cfg.x0.clone();
        let mut xi = vec![0.0; d];
        let mut w = vec![0.0; d];
        let mut drift = vec![0.0; d];
        let mut kick = vec![0.0; d];
        let mut slot = 0;
        for k in 0..=k_total {
            let record = k % stride == 0 || k == k_total;
            if record {
                out[slot * d..(slot + 1) * d].copy_from_slice(&v);
                slot += 1;
            }
            if k == k_total {
                break;
            }
            fill_normals(&mut stream, k * d as u64, &mut xi);
            if record && interp > 0 {
                // Frozen coefficients over the interval; the Brownian path
                // is a bridge pinned to the grid increment √ε ξ_k.
                model.drift_into(&v, &mut drift);
                let sub = cfg.step / interp as f64;
                w.iter_mut().for_each(|x| *x = 0.0);
                for j in 1..interp {
                    let left = (interp - j + 1) as f64;
                    let var = sub * (left - 1.0) / left;
                    for i in 0..d {
                        let target = noise_factor * xi[i];
                        let z = interp_stream.normal((k * interp as u64 + j as u64) * d as u64 + i as u64);
                        w[i] += (target - w[i]) / left + var.sqrt() * z * noise_factor / cfg.step.sqrt();
                    }
                    model.diffuse_into(&v, &w, &mut kick);
                    let s = j as f64 * sub;
                    for i in 0..d {
                        out[slot * d + i] = v[i] + s * drift[i] + kick[i];
                    }
                    slot += 1;
                }
            }
            stepper.advance(&mut v, &xi);
            if exploded(&v) {
                return Err(Error::Overflow { path: p, step: k + 1 });
            }
        }
        Ok(())
    })?;
    let assumption = (scheme != Scheme::ContinuousEm).then(|| check_discretization_assumption(model, cfg.step));
    Ok(TrajectoryBatch {
        dim: d,
        times,
        steps,
        values,
        meta: BatchMeta {
            scheme,
            noise_scaling: noise,
            model: model.to_spec(),
            config: cfg.clone(),
            n_steps: k_total,
            seeds: seeds(cfg, Lane::Main),
            interpolation_points: (interp > 0).then_some(interp),
            assumption,
        },
    })
}

/// Euler–Maruyama paths of the continuous dynamic.
pub fn simulate_batch(model: &Model, cfg: &SimConfig) -> Result<TrajectoryBatch> {
    simulate_grid(model, cfg, NoiseScaling::SqrtStep, 0, Scheme::ContinuousEm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainOptions {
    #[serde(default)]
    pub noise: NoiseScaling,
    /// Points per interval of the frozen-coefficient interpolation
    /// recorded between grid times (0 records the chain only).
    #[serde(default)]
    pub interpolation_points: usize,
}

/// The discrete chain, optionally with its frozen-coefficient
/// interpolation. Grid values are bitwise identical to the chain whatever
/// `interpolation_points` is, and to [`simulate_batch`] under the default
/// noise scaling.
pub fn simulate_discrete_chain(model: &Model, cfg: &SimConfig, opts: ChainOptions) -> Result<TrajectoryBatch> {
    let scheme = if opts.interpolation_points > 1 { Scheme::FrozenInterpolation } else { Scheme::DiscreteChain };
    let interp = if opts.interpolation_points > 1 { opts.interpolation_points } else { 0 };
    simulate_grid(model, cfg, opts.noise, interp, scheme)
}

/// Two copies driven by the same increments, with
/// `r[p * n_records + t] = ‖X_t − Y_t‖²`.
#[derive(Debug, Clone)]
pub struct CoupledBatch {
    pub x: TrajectoryBatch,
    pub y: TrajectoryBatch,
    pub r: Vec<f64>,
}

impl CoupledBatch {
    pub fn times(&self) -> &[f64] {
        &self.x.times
    }

    /// `Ê r(t)` per record.
    pub fn mean_r(&self) -> Vec<f64> {
        let m = self.x.n_records();
        let n = self.x.n_paths();
        (0..m).map(|t| (0..n).map(|p| self.r[p * m + t]).sum::<f64>() / n as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mean = self.mean_r();
        let mut s = String::from("step,time,mean_r\n");
        for t in 0..mean.len() {
            s.push_str(&format!("{},{:e},{:e}\n", self.x.steps[t], self.x.times[t], mean[t]));
        }
        s
    }
}

pub fn couple_paths(model: &Model, cfg: &SimConfig, x0: &[f64], y0: &[f64]) -> Result<CoupledBatch> {
    let x = simulate_batch(model, &SimConfig { x0: x0.to_vec(), ..cfg.clone() })?;
    let y = simulate_batch(model, &SimConfig { x0: y0.to_vec(), ..cfg.clone() })?;
    let m = x.n_records();
    let mut r = vec![0.0; x.n_paths() * m];
    for p in 0..x.n_paths() {
        for t in 0..m {
            r[p * m + t] = x.state(p, t).iter().zip(y.state(p, t)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    Ok(CoupledBatch { x, y, r })
}

/// Terminal states of the chain at step `ε` and of a reference Euler
/// scheme at step `ε / substeps` driven by the same Brownian path: the
/// chain's normal for step `k` is `Σ_j ξ_{k,j} / √substeps` over the fine
/// normals of that interval (stream lane `Fine`).
#[derive(Debug, Clone)]
pub struct ReferencePair {
    pub coarse: Vec<Vec<f64>>,
    pub fine: Vec<Vec<f64>>,
}

pub fn simulate_with_reference(model: &Model, cfg: &SimConfig, substeps: usize) -> Result<ReferencePair> {
    cfg.validate(model.dim())?;
    if substeps == 0 {
        return Err(Error::pre("substeps must be >= 1"));
    }
    let d = model.dim();
    let k_total = cfg.n_steps();
    let fine_step = cfg.step / substeps as f64;
    let norm = (substeps as f64).sqrt();
    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut stream = Stream::new(cfg.base_seed, p as u32, Lane::Fine);
            let mut coarse = Stepper::new(model, cfg.step, cfg.step.sqrt());
            let mut fine = Stepper::new(model, fine_step, fine_step.sqrt());
            let mut z = cfg.x0.clone();
            let mut v = cfg.x0.clone();
            let mut xi = vec![0.0; d];
            let mut agg = vec![0.0; d];
            for k in 0..k_total {
                agg.iter_mut().for_each(|a| *a = 0.0);
                for j in 0..substeps as u64 {
                    fill_normals(&mut stream, (k * substeps as u64 + j) * d as u64, &mut xi);
                    for i in 0..d {
                        agg[i] += xi[i];
                    }
                    fine.advance(&mut v, &xi);
                }
                agg.iter_mut().for_each(|a| *a /= norm);
                coarse.advance(&mut z, &agg);
                if exploded(&v) || exploded(&z) {
                    return Err(Error::Overflow { path: p, step: k + 1 });
                }
            }
            Ok((z, v))
        })
        .collect();
    let mut pair = ReferencePair { coarse: Vec::with_capacity(cfg.n_paths), fine: Vec::with_capacity(cfg.n_paths) };
    for r in results {
        let (z, v) = r?;
        pair.coarse.push(z);
        pair.fine.push(v);
    }
    Ok(pair)
}

/// Convenience constructor for scalar experiments.
pub fn scalar_model(h: f64, sigma: f64, rho: f64, eta: f64) -> Result<Model> {
    Ok(Model::Decoupled(DecoupledParams::scalar(h, sigma, rho, eta)?))
}
