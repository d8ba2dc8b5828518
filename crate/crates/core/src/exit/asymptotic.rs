use serde::{Deserialize, Serialize};

use super::{exit_time_mc, exit_time_quadrature, Crossing, Domain, ExitMcOptions, ExitProblem};
use crate::error::{Error, Result};
use crate::model::DecoupledParams;
use crate::simulate::NoiseScaling;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasiPotential {
    /// `min over |ζ| = r` of `Σ (h_i/ρ_i) ln(1 + ρ_i ζ_i²/σ_i)`
    /// (`h_i ζ_i²/σ_i` when `ρ_i = 0`).
    pub barrier: f64,
    pub argmin: Vec<f64>,
    /// `inf over |ζ| = r` of `Σ -(h_i/ρ_i) ln(σ_i + ρ_i ζ_i²)`, literally;
    /// `None` when some `ρ_i = 0`.
    pub signed: Option<f64>,
    pub signed_argmin: Option<Vec<f64>>,
}

fn coord_barrier(p: &DecoupledParams, i: usize, u: f64) -> f64 {
    let (h, s, rho) = (p.h[i], p.sigma[i], p.rho[i]);
    if rho > 0.0 {
        h / rho * (rho * u / s).ln_1p()
    } else {
        h * u / s
    }
}

/// Barrier on the sphere of radius `r`.
///
/// Each term is concave in `u_i = ζ_i²`, so the minimum over the simplex
/// `Σ u_i = r²` sits at a vertex: all mass on one coordinate. The signed
/// form is convex in `u` and is solved by water-filling,
/// `u_i = max(0, (h_i/λ - σ_i)/ρ_i)` with `λ` found by bisection.
pub fn quasi_potential(params: &DecoupledParams, r: f64) -> Result<QuasiPotential> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid("r must be > 0"));
    }
    let d = params.dim();
    let r2 = r * r;
    let (best, barrier) = (0..d)
        .map(|i| (i, coord_barrier(params, i, r2)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("dimension >= 1");
    let mut argmin = vec![0.0; d];
    argmin[best] = r;

    let (signed, signed_argmin) = if params.rho.iter().all(|&rho| rho > 0.0) {
        let alloc = |lam: f64| -> Vec<f64> {
            (0..d).map(|i| ((params.h[i] / lam - params.sigma[i]) / params.rho[i]).max(0.0)).collect()
        };
        let mut hi = (0..d).map(|i| params.h[i] / params.sigma[i]).fold(0.0, f64::max);
        let mut lo = hi;
        while alloc(lo).iter().sum::<f64>() < r2 {
            lo *= 0.5;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if alloc(mid).iter().sum::<f64>() > r2 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut u = alloc(0.5 * (lo + hi));
        let total: f64 = u.iter().sum();
        u.iter_mut().for_each(|x| *x *= r2 / total);
        let value = (0..d)
            .map(|i| -(params.h[i] / params.rho[i]) * (params.sigma[i] + params.rho[i] * u[i]).ln())
            .sum();
        (Some(value), Some(u.iter().map(|x| x.sqrt()).collect()))
    } else {
        (None, None)
    };
    Ok(QuasiPotential { barrier, argmin, signed, signed_argmin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub etas: Vec<f64>,
    pub r: f64,
    pub n_paths: usize,
    pub step: f64,
    pub max_time: f64,
    pub seed: u64,
    #[serde(default)]
    pub crossing: Crossing,
    #[serde(default = "half")]
    pub abort_if_censored_over: Option<f64>,
}

fn half() -> Option<f64> {
    Some(0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eta: f64,
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_exited: usize,
    pub n_censored: usize,
    /// `η ln E τ` from the Monte Carlo mean.
    pub eta_log_mean: Option<f64>,
    /// Same quantity from the double integral (one dimension only).
    pub eta_log_quadrature: Option<f64>,
    pub usable: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub r: f64,
    pub quasi_potential: QuasiPotential,
    pub rows: Vec<SweepRow>,
    /// Mean of `η ln E τ` over usable rows.
    pub fitted_barrier: Option<f64>,
    /// Least-squares `C` in `η ln E τ ≈ C V` through the origin.
    pub fitted_constant: Option<f64>,
    /// Relative change of `η ln E τ` between the two smallest usable `η`.
    pub relative_change: Option<f64>,
    pub stabilized: Option<bool>,
}

pub const STABILIZATION_TOLERANCE: f64 = 0.3;

/// Mean exit time from the ball of radius `r` for each `η`, starting at 0.
pub fn asymptotic_sweep(params: &DecoupledParams, cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.etas.is_empty() {
        return Err(Error::invalid("etas must not be empty"));
    }
    if !(cfg.max_time > 0.0 && cfg.max_time.is_finite()) {
        return Err(Error::invalid("max_time must be > 0"));
    }
    let qp = quasi_potential(params, cfg.r)?;
    let d = params.dim();
    let domain = Domain::Ball { r: cfg.r };
    let mut rows = Vec::with_capacity(cfg.etas.len());
    for &eta in &cfg.etas {
        let p = params.with_eta(eta)?;
        let problem = ExitProblem {
            params: p.clone(),
            domain,
            x0: vec![0.0; d],
            step: cfg.step,
            max_steps: Some((cfg.max_time / cfg.step).ceil() as u64),
            n_paths: cfg.n_paths,
            seed: cfg.seed,
        };
        let opts = ExitMcOptions {
            crossing: cfg.crossing,
            noise: NoiseScaling::SqrtStep,
            abort_if_censored_over: cfg.abort_if_censored_over,
        };
        let eta_log_quadrature =
            if d == 1 { exit_time_quadrature(&p, &domain, 0.0).ok().map(|q| eta * q.value.ln()) } else { None };
        let row = match exit_time_mc(&problem, &opts) {
            Ok(res) => {
                let e = res.estimate;
                let frac = e.censored_fraction();
                let reason = if frac > 0.5 {
                    Some(format!("censored fraction {frac:.3} > 0.5"))
                } else if e.mean < 100.0 * cfg.step {
                    Some(format!("mean exit time {} below 100 steps", e.mean))
                } else {
                    None
                };
                SweepRow {
                    eta,
                    mean: Some(e.mean),
                    ci_low: Some(e.ci_low),
                    ci_high: Some(e.ci_high),
                    n_exited: e.n_exited,
                    n_censored: e.n_censored,
                    eta_log_mean: Some(eta * e.mean.ln()),
                    eta_log_quadrature,
                    usable: reason.is_none(),
                    reason,
                }
            }
            Err(Error::HorizonTooShort { n_paths }) => SweepRow {
                eta,
                mean: None,
                ci_low: None,
                ci_high: None,
                n_exited: 0,
                n_censored: n_paths,
                eta_log_mean: None,
                eta_log_quadrature,
                usable: false,
                reason: Some("all paths censored".into()),
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }

    let mut usable: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.usable).filter_map(|r| r.eta_log_mean.map(|y| (r.eta, y))).collect();
    usable.sort_by(|a, b| a.0.total_cmp(&b.0));
    let fitted_barrier = (!usable.is_empty()).then(|| usable.iter().map(|u| u.1).sum::<f64>() / usable.len() as f64);
    let fitted_constant = fitted_barrier.map(|y| y / qp.barrier);
    let relative_change = (usable.len() >= 2).then(|| {
        let (ya, yb) = (usable[0].1, usable[1].1);
        (ya - yb).abs() / ya.abs().max(yb.abs())
    });
    Ok(SweepReport {
        r: cfg.r,
        quasi_potential: qp,
        rows,
        fitted_barrier,
        fitted_constant,
        relative_change,
        stabilized: relative_change.map(|c| c < STABILIZATION_TOLERANCE),
    })
}
