//! First exit times: Monte Carlo, the one-dimensional double integral,
//! a finite-difference boundary-value oracle, quasi-potential asymptotics
//! and the continuous/discrete comparison.

mod asymptotic;
mod bounds;
mod mc;
mod ode;
mod quadrature;
mod sandwich;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DecoupledParams;

pub use asymptotic::{asymptotic_sweep, quasi_potential, QuasiPotential, SweepConfig, SweepReport, SweepRow};
pub use bounds::{
    fourth_moment_bound, oscillation_constant, oscillation_probability, oscillation_sweep, FourthMomentBound,
    terminal_w2_squared, OscillationConfig, OscillationEstimate, OscillationSweep,
};
pub use mc::{exit_time_mc, resolve_max_steps, Crossing, ExitMcOptions, ExitMcResult, PathExit};
pub use ode::{exit_time_ode_oracle, ode_richardson, solve_exit_bvp, Richardson};
pub use quadrature::{exit_time_quadrature, ExitIntegral};
pub use sandwich::{sandwich_check, SandwichConfig, SandwichReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    /// `[a, b]`, one-dimensional only.
    Interval { a: f64, b: f64 },
    /// Open ball of radius `r` around the origin.
    Ball { r: f64 },
}

impl Domain {
    /// Whether `v` has left the open domain (boundary counts as exited).
    #[inline]
    pub fn outside(&self, v: &[f64]) -> bool {
        match *self {
            Domain::Interval { a, b } => v[0] <= a || v[0] >= b,
            Domain::Ball { r } => v.iter().map(|x| x * x).sum::<f64>() >= r * r,
        }
    }

    /// Bounds of a one-dimensional domain.
    pub fn interval(&self, dim: usize) -> Option<(f64, f64)> {
        match *self {
            Domain::Interval { a, b } => Some((a, b)),
            Domain::Ball { r } if dim == 1 => Some((-r, r)),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Domain::Interval { a, b } => format!("interval:{a}:{b}"),
            Domain::Ball { r } => format!("ball:{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitProblem {
    pub params: DecoupledParams,
    pub domain: Domain,
    pub x0: Vec<f64>,
    pub step: f64,
    /// `None` picks 100 times the quadrature prediction (d = 1 only).
    pub max_steps: Option<u64>,
    pub n_paths: usize,
    pub seed: u64,
}

impl ExitProblem {
    pub fn validate(&self) -> Result<()> {
        let d = self.params.dim();
        if self.x0.len() != d {
            return Err(Error::invalid(format!("x0 must have length {d}")));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x0 must be finite"));
        }
        match self.domain {
            Domain::Interval { a, b } => {
                if d != 1 {
                    return Err(Error::invalid("interval domains need dimension 1"));
                }
                if !(a < b) || !a.is_finite() || !b.is_finite() {
                    return Err(Error::invalid("domain must satisfy a < b"));
                }
                if self.x0[0] < a || self.x0[0] > b {
                    return Err(Error::invalid("x0 must lie in [a, b]"));
                }
            }
            Domain::Ball { r } => {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::invalid("domain radius must be > 0"));
                }
                if self.x0.iter().map(|x| x * x).sum::<f64>() > r * r {
                    return Err(Error::invalid("x0 must lie in the closed ball"));
                }
            }
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid("step must be > 0"));
        }
        if self.n_paths == 0 || u32::try_from(self.n_paths).is_err() {
            return Err(Error::invalid("n_paths must be between 1 and 2^32 - 1"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::invalid("max_steps must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitMethod {
    Mc,
    Quadrature,
    Ode,
}

impl ExitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExitMethod::Mc => "mc",
            ExitMethod::Quadrature => "quadrature",
            ExitMethod::Ode => "ode",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitTimeEstimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_exited: usize,
    pub n_censored: usize,
    pub method: ExitMethod,
    /// True when censored paths make `mean` a lower bound.
    pub censored_lower_bound: bool,
}

impl ExitTimeEstimate {
    pub fn exact(value: f64, method: ExitMethod) -> Self {
        ExitTimeEstimate {
            mean: value,
            ci_low: value,
            ci_high: value,
            n_exited: 0,
            n_censored: 0,
            method,
            censored_lower_bound: false,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    pub fn censored_fraction(&self) -> f64 {
        let n = self.n_exited + self.n_censored;
        if n == 0 {
            0.0
        } else {
            self.n_censored as f64 / n as f64
        }
    }
}

pub const EXIT_CSV_HEADER: &str = "method,eta,epsilon,domain,mean,ci_low,ci_high,n_exited,n_censored";

pub fn exit_csv_row(est: &ExitTimeEstimate, eta: f64, epsilon: Option<f64>, domain: &Domain) -> String {
    format!(
        "{},{eta:e},{},{},{:e},{:e},{:e},{},{}",
        est.method.as_str(),
        epsilon.map_or(String::new(), |e| format!("{e:e}")),
        domain.label(),
        est.mean,
        est.ci_low,
        est.ci_high,
        est.n_exited,
        est.n_censored
    )
}
