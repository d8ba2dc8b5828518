use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{exit_time_quadrature, ExitMethod, ExitProblem, ExitTimeEstimate};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::{Lane, Stream};
use crate::simulate::{exploded, fill_normals, NoiseScaling, Stepper};

const CHUNK: usize = 64;
const DEFAULT_STEP_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossing {
    /// Exit only when a grid value is outside.
    #[default]
    GridOnly,
    /// Also test for a crossing between grid values with the Brownian-bridge
    /// probability of the frozen-coefficient step. One-dimensional only.
    BrownianBridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitMcOptions {
    #[serde(default)]
    pub crossing: Crossing,
    #[serde(default)]
    pub noise: NoiseScaling,
    /// Stop early once more than this fraction of finished paths is censored.
    #[serde(default)]
    pub abort_if_censored_over: Option<f64>,
}

impl Default for ExitMcOptions {
    fn default() -> Self {
        ExitMcOptions { crossing: Crossing::GridOnly, noise: NoiseScaling::SqrtStep, abort_if_censored_over: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PathExit {
    Exited { time: f64, step: u64 },
    Censored,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitMcResult {
    pub estimate: ExitTimeEstimate,
    pub paths: Vec<PathExit>,
    pub max_steps: u64,
    /// Paths beyond `paths.len()` were skipped by the censoring abort.
    pub aborted: bool,
}

/// `max_steps` of the problem, or 100 times the quadrature prediction capped
/// at 10^8 steps when unset (one dimension only).
pub fn resolve_max_steps(problem: &ExitProblem) -> Result<u64> {
    if let Some(m) = problem.max_steps {
        return Ok(m);
    }
    if problem.params.dim() != 1 {
        return Err(Error::pre("max_steps is required for d >= 2"));
    }
    let q = exit_time_quadrature(&problem.params, &problem.domain, problem.x0[0])?;
    let steps = (100.0 * q.value / problem.step).ceil();
    Ok(if steps.is_finite() && steps >= 1.0 { (steps as u64).min(DEFAULT_STEP_CAP) } else { DEFAULT_STEP_CAP })
}

fn run_path(problem: &ExitProblem, model: &Model, opts: &ExitMcOptions, max_steps: u64, p: usize) -> Result<PathExit> {
    let d = problem.params.dim();
    let mut v = problem.x0.clone();
    if problem.domain.outside(&v) {
        return Ok(PathExit::Exited { time: 0.0, step: 0 });
    }
    let eps = problem.step;
    let noise = opts.noise.factor(eps);
    let mut stepper = Stepper::new(model, eps, noise);
    let mut main = Stream::new(problem.seed, p as u32, Lane::Main);
    let mut bridge = Stream::new(problem.seed, p as u32, Lane::Bridge);
    let bounds = match opts.crossing {
        Crossing::BrownianBridge => problem.domain.interval(d),
        Crossing::GridOnly => None,
    };
    let mut xi = vec![0.0; d];
    for k in 0..max_steps {
        fill_normals(&mut main, k * d as u64, &mut xi);
        let prev = v[0];
        stepper.advance(&mut v, &xi);
        if exploded(&v) {
            return Err(Error::Overflow { path: p, step: k + 1 });
        }
        if problem.domain.outside(&v) {
            return Ok(PathExit::Exited { time: (k + 1) as f64 * eps, step: k + 1 });
        }
        if let Some((a, b)) = bounds {
            let var = noise * noise * problem.params.diffusion_sq_at(0, prev);
            let p_up = (-2.0 * (b - prev) * (b - v[0]) / var).exp();
            let p_lo = (-2.0 * (prev - a) * (v[0] - a) / var).exp();
            let p_cross = 1.0 - (1.0 - p_up) * (1.0 - p_lo);
            if bridge.uniform(k) < p_cross {
                return Ok(PathExit::Exited { time: (k as f64 + 0.5) * eps, step: k + 1 });
            }
        }
    }
    Ok(PathExit::Censored)
}

/// Monte Carlo mean exit time of the Euler–Maruyama chain.
///
/// Paths are processed in fixed chunks of 64 so an early abort stops at the
/// same place for any thread count. The 95% interval is the normal interval
/// over exited paths; with censoring the mean is a lower bound.
pub fn exit_time_mc(problem: &ExitProblem, opts: &ExitMcOptions) -> Result<ExitMcResult> {
    problem.validate()?;
    if opts.crossing == Crossing::BrownianBridge && problem.domain.interval(problem.params.dim()).is_none() {
        return Err(Error::invalid("crossing brownian_bridge needs a one-dimensional domain"));
    }
    if let Some(f) = opts.abort_if_censored_over {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::invalid("abort_if_censored_over must be in [0, 1]"));
        }
    }
    let max_steps = resolve_max_steps(problem)?;
    let model = Model::Decoupled(problem.params.clone());
    let mut paths = Vec::with_capacity(problem.n_paths);
    let mut aborted = false;
    for start in (0..problem.n_paths).step_by(CHUNK) {
        let end = (start + CHUNK).min(problem.n_paths);
        let chunk: Vec<Result<PathExit>> =
            (start..end).into_par_iter().map(|p| run_path(problem, &model, opts, max_steps, p)).collect();
        for r in chunk {
            paths.push(r?);
        }
        if let Some(limit) = opts.abort_if_censored_over {
            let censored = paths.iter().filter(|e| matches!(e, PathExit::Censored)).count();
            if end < problem.n_paths && censored as f64 > limit * paths.len() as f64 {
                aborted = true;
                break;
            }
        }
    }
    let times: Vec<f64> = paths
        .iter()
        .filter_map(|e| match e {
            PathExit::Exited { time, .. } => Some(*time),
            PathExit::Censored => None,
        })
        .collect();
    let n_censored = paths.len() - times.len();
    if times.is_empty() {
        return Err(Error::HorizonTooShort { n_paths: paths.len() });
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let sd = if times.len() > 1 {
        (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let hw = 1.96 * sd / n.sqrt();
    let estimate = ExitTimeEstimate {
        mean,
        ci_low: mean - hw,
        ci_high: mean + hw,
        n_exited: times.len(),
        n_censored,
        method: ExitMethod::Mc,
        censored_lower_bound: n_censored > 0,
    };
    Ok(ExitMcResult { estimate, paths, max_steps, aborted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exit::Domain;
    use crate::model::DecoupledParams;

    fn problem(eta: f64, step: f64, n: usize) -> ExitProblem {
        ExitProblem {
            params: DecoupledParams::scalar(1.0, 1.0, 1.0, eta).unwrap(),
            domain: Domain::Interval { a: -1.0, b: 1.0 },
            x0: vec![0.0],
            step,
            max_steps: Some(2_000_000),
            n_paths: n,
            seed: 11,
        }
    }

    #[test]
    fn boundary_start_exits_immediately() {
        let mut p = problem(1.0, 0.01, 4);
        p.x0 = vec![1.0];
        let r = exit_time_mc(&p, &ExitMcOptions::default()).unwrap();
        assert_eq!(r.estimate.mean, 0.0);
        assert!(r.paths.iter().all(|e| *e == PathExit::Exited { time: 0.0, step: 0 }));
    }

    #[test]
    fn all_censored_is_an_error() {
        let mut p = problem(0.01, 0.01, 8);
        p.max_steps = Some(3);
        assert!(matches!(exit_time_mc(&p, &ExitMcOptions::default()), Err(Error::HorizonTooShort { n_paths: 8 })));
    }

    #[test]
    fn abort_is_deterministic() {
        let mut p = problem(0.1, 0.01, 1000);
        p.max_steps = Some(2000);
        let opts = ExitMcOptions { abort_if_censored_over: Some(0.5), ..Default::default() };
        let a = exit_time_mc(&p, &opts).unwrap();
        let b = exit_time_mc(&p, &opts).unwrap();
        assert!(a.aborted);
        assert_eq!(a.paths.len(), 64);
        assert_eq!(a, b);
    }

    #[test]
    fn bridge_shortens_exit_times() {
        let p = problem(1.0, 0.01, 400);
        let grid = exit_time_mc(&p, &ExitMcOptions::default()).unwrap().estimate.mean;
        let opts = ExitMcOptions { crossing: Crossing::BrownianBridge, ..Default::default() };
        let bridged = exit_time_mc(&p, &opts).unwrap().estimate.mean;
        assert!(bridged < grid, "{bridged} vs {grid}");
    }

    #[test]
    fn bridge_rejects_multidimensional_ball() {
        let p = ExitProblem {
            params: DecoupledParams::new(vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0], 1.0).unwrap(),
            domain: Domain::Ball { r: 1.0 },
            x0: vec![0.0, 0.0],
            step: 0.01,
            max_steps: Some(100),
            n_paths: 2,
            seed: 0,
        };
        let opts = ExitMcOptions { crossing: Crossing::BrownianBridge, ..Default::default() };
        assert!(exit_time_mc(&p, &opts).unwrap_err().is_validation());
        assert!(exit_time_mc(&p, &ExitMcOptions::default()).is_ok());
    }

    #[test]
    fn validation() {
        let mut p = problem(1.0, 0.01, 4);
        p.x0 = vec![2.0];
        assert!(exit_time_mc(&p, &ExitMcOptions::default()).unwrap_err().is_validation());
        p.x0 = vec![0.0];
        p.domain = Domain::Interval { a: 1.0, b: -1.0 };
        assert!(exit_time_mc(&p, &ExitMcOptions::default()).unwrap_err().is_validation());
    }
}
