use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{linear_fit, w2_empirical_1d, SampleSet};
use crate::model::{CoordParams, DecoupledParams, Model};
use crate::rng::{Lane, Stream};
use crate::simulate::{exploded, simulate_with_reference, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourthMomentBound {
    pub value: f64,
    /// `2h - ηρ`.
    pub contraction: f64,
}

/// Bound on `E sup_{t in [kε,(k+1)ε]} |v_t|⁴` for paths kept inside the
/// ball of radius `b + δ` at grid times:
/// `[(2 + 2/δ)(b+δ)² ηρ/(2h - ηρ) + (5 + 1/δ)(ησ)² ε] exp(12(1+δ) ηρ ε)`.
pub fn fourth_moment_bound(p: &CoordParams, b: f64, delta: f64, step: f64) -> Result<FourthMomentBound> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta must be > 0"));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::invalid("b must be >= 0"));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("step must be > 0"));
    }
    let er = p.eta * p.rho;
    let c = 2.0 * p.h - er;
    if c <= 0.0 {
        return Err(Error::ContractionNonPositive { c });
    }
    let es = p.eta * p.sigma;
    let core = (2.0 + 2.0 / delta) * (b + delta).powi(2) * er / c + (5.0 + 1.0 / delta) * es * es * step;
    Ok(FourthMomentBound { value: core * (12.0 * (1.0 + delta) * er * step).exp(), contraction: c })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillationConfig {
    pub step: f64,
    pub delta_bar: f64,
    pub horizon: f64,
    pub n_paths: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub x0: f64,
    pub seed: u64,
}

pub(crate) fn default_substeps() -> usize {
    64
}

impl OscillationConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid("step must be > 0"));
        }
        if !(self.delta_bar > 0.0 && self.delta_bar.is_finite()) {
            return Err(Error::invalid("delta_bar must be > 0"));
        }
        if !(self.horizon >= self.step && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon must be >= step"));
        }
        if self.n_paths == 0 || u32::try_from(self.n_paths).is_err() {
            return Err(Error::invalid("n_paths must be between 1 and 2^32 - 1"));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps must be >= 1"));
        }
        if !self.x0.is_finite() {
            return Err(Error::invalid("x0 must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationEstimate {
    pub step: f64,
    pub delta_bar: f64,
    /// Fraction of intervals `[kε, (k+1)ε]` with `sup |v_t - v_kε| > δ̄`.
    pub probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub exceedances: u64,
    pub intervals: u64,
    /// `probability · δ̄⁴`, the implied constant of the `C/δ̄⁴` bound.
    pub constant: f64,
}

/// `C = p δ̄⁴`; the bound at another level is then `C / δ̄'⁴`.
pub fn oscillation_constant(probability: f64, delta_bar: f64) -> f64 {
    probability * delta_bar.powi(4)
}

/// Fine-grid path state with a per-interval oscillation tracker.
pub(crate) struct FinePath {
    p: CoordParams,
    fine_step: f64,
    fine_noise: f64,
    stream: Stream,
    substeps: usize,
    pub(crate) v: f64,
}

impl FinePath {
    pub(crate) fn new(p: CoordParams, step: f64, substeps: usize, seed: u64, path: u32, x0: f64) -> Self {
        let fine_step = step / substeps as f64;
        FinePath {
            p,
            fine_step,
            fine_noise: fine_step.sqrt(),
            stream: Stream::new(seed, path, Lane::Fine),
            substeps,
            v: x0,
        }
    }

    /// Runs interval `k`; `visit(v, xi)` sees every fine state and normal.
    #[inline]
    pub(crate) fn interval(&mut self, k: u64, mut visit: impl FnMut(f64, f64)) {
        let base = k * self.substeps as u64;
        for j in 0..self.substeps as u64 {
            let xi = self.stream.normal(base + j);
            let x = self.v;
            self.v = x - self.fine_step * self.p.h * x + self.fine_noise * self.p.diffusion_sq(x).sqrt() * xi;
            visit(self.v, xi);
        }
    }
}

pub fn oscillation_probability(params: &DecoupledParams, cfg: &OscillationConfig) -> Result<OscillationEstimate> {
    cfg.validate()?;
    if params.dim() != 1 {
        return Err(Error::pre("oscillation estimates are one-dimensional"));
    }
    let p = params.coord(0);
    let k_total = (cfg.horizon / cfg.step).round() as u64;
    let counts: Vec<Result<u64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut fp = FinePath::new(p, cfg.step, cfg.substeps, cfg.seed, path as u32, cfg.x0);
            let mut hits = 0;
            for k in 0..k_total {
                let start = fp.v;
                let mut dev: f64 = 0.0;
                fp.interval(k, |v, _| dev = dev.max((v - start).abs()));
                if dev > cfg.delta_bar {
                    hits += 1;
                }
                if exploded(&[fp.v]) {
                    return Err(Error::Overflow { path, step: (k + 1) * cfg.substeps as u64 });
                }
            }
            Ok(hits)
        })
        .collect();
    let mut exceedances = 0;
    for c in counts {
        exceedances += c?;
    }
    let intervals = k_total * cfg.n_paths as u64;
    let prob = exceedances as f64 / intervals as f64;
    let hw = 1.96 * (prob * (1.0 - prob) / intervals as f64).sqrt();
    Ok(OscillationEstimate {
        step: cfg.step,
        delta_bar: cfg.delta_bar,
        probability: prob,
        ci_low: (prob - hw).max(0.0),
        ci_high: (prob + hw).min(1.0),
        exceedances,
        intervals,
        constant: oscillation_constant(prob, cfg.delta_bar),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationSweep {
    pub rows: Vec<OscillationEstimate>,
    /// Log-log slope of probability against step over rows with at least
    /// one exceedance; `None` with fewer than two such rows.
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
}

/// Runs [`oscillation_probability`] at each step with `cfg.horizon` fixed.
pub fn oscillation_sweep(params: &DecoupledParams, cfg: &OscillationConfig, steps: &[f64]) -> Result<OscillationSweep> {
    let rows = steps
        .iter()
        .map(|&step| oscillation_probability(params, &OscillationConfig { step, ..cfg.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let pos: Vec<&OscillationEstimate> = rows.iter().filter(|r| r.exceedances > 0).collect();
    let (slope, r_squared) = if pos.len() >= 2 {
        let x: Vec<f64> = pos.iter().map(|r| r.step.ln()).collect();
        let y: Vec<f64> = pos.iter().map(|r| r.probability.ln()).collect();
        let (_, s, r2) = linear_fit(&x, &y);
        (Some(s), Some(r2))
    } else {
        (None, None)
    };
    Ok(OscillationSweep { rows, slope, r_squared })
}

/// Squared W2 distance between terminal marginals of the step-`ε` chain and
/// an `ε/substeps` reference driven by the same Brownian path.
pub fn terminal_w2_squared(model: &Model, cfg: &SimConfig, substeps: usize) -> Result<f64> {
    if model.dim() != 1 {
        return Err(Error::pre("terminal_w2_squared is one-dimensional"));
    }
    let pair = simulate_with_reference(model, cfg, substeps)?;
    let coarse = SampleSet::from_1d(pair.coarse.iter().map(|v| v[0]).collect())?;
    let fine = SampleSet::from_1d(pair.fine.iter().map(|v| v[0]).collect())?;
    Ok(w2_empirical_1d(&coarse, &fine)?.powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_example_value() {
        let p = CoordParams { h: 1.0, sigma: 1.0, rho: 1.0, eta: 0.1 };
        let b = fourth_moment_bound(&p, 1.0, 1.0, 0.01).unwrap();
        // 16·0.1/1.9 + 6·0.01·0.01, times e^{0.024}
        let oracle = (16.0 * 0.1 / 1.9 + 6.0 * 1e-4) * 0.024f64.exp();
        assert!((b.value - oracle).abs() < 1e-14);
        assert!((b.value - 0.8632).abs() < 5e-5);
    }

    #[test]
    fn bound_needs_contraction() {
        let p = CoordParams { h: 0.5, sigma: 1.0, rho: 1.0, eta: 1.0 };
        assert!(matches!(fourth_moment_bound(&p, 1.0, 1.0, 0.01), Err(Error::ContractionNonPositive { .. })));
    }

    #[test]
    fn oscillation_grows_with_step() {
        let params = DecoupledParams::scalar(1.0, 1.0, 1.0, 0.5).unwrap();
        let cfg =
            OscillationConfig { step: 0.02, delta_bar: 0.2, horizon: 2.0, n_paths: 400, substeps: 16, x0: 0.0, seed: 2 };
        let sweep = oscillation_sweep(&params, &cfg, &[0.08, 0.04, 0.02]).unwrap();
        assert!(sweep.rows.windows(2).all(|w| w[0].probability > w[1].probability), "{sweep:?}");
        assert!(sweep.slope.unwrap() > 0.5);
    }

    #[test]
    fn reference_w2_shrinks() {
        let model = Model::Decoupled(DecoupledParams::scalar(1.0, 1.0, 1.0, 0.1).unwrap());
        let cfg = |step| SimConfig { step, horizon: 1.0, n_paths: 4000, base_seed: 9, x0: vec![0.0], record_stride: 1 };
        let a = terminal_w2_squared(&model, &cfg(0.1), 64).unwrap();
        let b = terminal_w2_squared(&model, &cfg(0.0125), 64).unwrap();
        assert!(b < a, "{a} {b}");
    }
}
