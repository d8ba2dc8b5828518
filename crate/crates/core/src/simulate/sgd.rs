//! Minibatch gradient noise of one-dimensional least squares.
//!
//! Data `y_j = w* x_j + e_j` with `x_j ~ N(0, 1)` and `e_j ~ N(0, s²)`.
//! The per-sample gradient of `½ (w x_j - y_j)²` is
//! `g_j(w) = x_j² (w - w*) - x_j e_j`, so the minibatch gradient variance
//! is quadratic in `w - w*`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::linear_fit;
use crate::rng::{Lane, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdLabConfig {
    pub n_samples: usize,
    pub batch: usize,
    pub noise_std: f64,
    /// Probe parameter values `w`.
    #[serde(default = "default_grid")]
    pub w_grid: Vec<f64>,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    #[serde(default = "default_w_star")]
    pub w_star: f64,
    pub seed: u64,
}

pub(crate) fn default_w_star() -> f64 {
    1.0
}

pub(crate) fn default_grid() -> Vec<f64> {
    (0..9).map(|k| 1.0 + (k as f64 - 4.0) * 0.25).collect()
}

pub(crate) fn default_draws() -> usize {
    2000
}

impl SgdLabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be >= 1"));
        }
        if self.batch == 0 || self.batch > self.n_samples {
            return Err(Error::invalid("batch must satisfy 1 <= batch <= n_samples"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be >= 0"));
        }
        if self.n_draws < 100 {
            return Err(Error::invalid("n_draws must be >= 100"));
        }
        if self.w_grid.is_empty() || self.w_grid.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("w_grid must be a non-empty list of finite values"));
        }
        if !self.w_star.is_finite() {
            return Err(Error::invalid("w_star must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub w: f64,
    pub offset: f64,
    pub variance: f64,
    /// Standard error of `variance` from the fourth central moment.
    pub variance_se: f64,
    /// Exact finite-population variance of the minibatch mean.
    pub exact_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QuadraticFit {
    /// `variance ≈ a + b (w - w*)²`.
    Fitted { a: f64, b: f64, r_squared: f64 },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgdLabReport {
    pub config: SgdLabConfig,
    pub rows: Vec<ProbeRow>,
    pub fit: QuadraticFit,
}

/// `batch` distinct indices from `0..n` (Floyd's algorithm), sorted.
fn draw_subset(stream: &mut Stream, n: usize, batch: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(batch);
    let mut cursor = 0;
    for j in (n - batch)..n {
        let t = stream.below(j as u64 + 1, &mut cursor) as usize;
        if chosen.contains(&t) {
            chosen.push(j);
        } else {
            chosen.push(t);
        }
    }
    chosen.sort_unstable();
    chosen
}

pub fn sgd_noise_experiment(cfg: &SgdLabConfig) -> Result<SgdLabReport> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let mut xs_stream = Stream::new(cfg.seed, 0, Lane::Aux);
    let mut es_stream = Stream::new(cfg.seed, 1, Lane::Aux);
    let x: Vec<f64> = (0..n as u64).map(|j| xs_stream.normal(j)).collect();
    let e: Vec<f64> = (0..n as u64).map(|j| cfg.noise_std * es_stream.normal(j)).collect();

    // The same minibatches are reused at every probe.
    let batches: Vec<Vec<usize>> = (0..cfg.n_draws)
        .into_par_iter()
        .map(|draw| draw_subset(&mut Stream::new(cfg.seed, draw as u32, Lane::Batch), n, cfg.batch))
        .collect();

    let rows: Vec<ProbeRow> = cfg
        .w_grid
        .par_iter()
        .map(|&w| {
            let offset = w - cfg.w_star;
            let grad = |j: usize| x[j] * x[j] * offset - x[j] * e[j];
            let draws: Vec<f64> = batches
                .iter()
                .map(|b| b.iter().map(|&j| grad(j)).sum::<f64>() / cfg.batch as f64)
                .collect();
            // Welford: identical draws give exactly zero.
            let (mut mean, mut m2) = (0.0, 0.0);
            for (k, &g) in draws.iter().enumerate() {
                let delta = g - mean;
                mean += delta / (k + 1) as f64;
                m2 += delta * (g - mean);
            }
            let m = draws.len() as f64;
            let variance = m2 / (m - 1.0);
            let m4 = draws.iter().map(|g| (g - mean).powi(4)).sum::<f64>() / m;
            let variance_se = ((m4 - variance * variance).max(0.0) / m).sqrt();
            let pop_mean = (0..n).map(grad).sum::<f64>() / n as f64;
            let pop_var = (0..n).map(|j| (grad(j) - pop_mean).powi(2)).sum::<f64>() / n as f64;
            let exact_variance = if n > 1 {
                pop_var / cfg.batch as f64 * (n - cfg.batch) as f64 / (n - 1) as f64
            } else {
                0.0
            };
            ProbeRow { w, offset, variance, variance_se, exact_variance }
        })
        .collect();

    let fit = if cfg.batch == n {
        QuadraticFit::Skipped { reason: "full batch: gradient has no sampling noise, all variances are 0".into() }
    } else if rows.len() < 3 {
        QuadraticFit::Skipped { reason: "need at least 3 probe values to fit".into() }
    } else {
        let sq: Vec<f64> = rows.iter().map(|r| r.offset * r.offset).collect();
        let var: Vec<f64> = rows.iter().map(|r| r.variance).collect();
        let (a, b, r_squared) = linear_fit(&sq, &var);
        QuadraticFit::Fitted { a, b, r_squared }
    };
    Ok(SgdLabReport { config: cfg.clone(), rows, fit })
}
