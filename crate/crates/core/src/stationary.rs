//! Stationary law of the decoupled dynamic.
//!
//! Coordinate `i` has density `p(x) = (1 + c x²)^κ / Z` with `c = ρ/σ` and
//! `κ = -(ηρ + h)/(ηρ)`; the joint law is the product. With `ρ = 0` the
//! coordinate is Ornstein–Uhlenbeck with Gaussian law `N(0, ησ/(2h))`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CoordParams, DecoupledParams};
use crate::quad::{self, Tolerance};
use crate::rng::{Lane, Stream};
use crate::special;

/// Integration factor `φ(x) = -κ ln(1 + c x²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiFactor {
    pub kappa: f64,
    pub c: f64,
}

impl PhiFactor {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        -self.kappa * (self.c * x * x).ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    PowerLaw,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZMethod {
    Quadrature,
    ClosedForm,
}

/// Unnormalized kernel `(1 + c x²)^κ` with its closed-form normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLaw {
    pub kappa: f64,
    pub c: f64,
    pub z: f64,
}

/// Real binomial coefficients `binom(κ, j)` by recurrence, summed against
/// `u^{-j} / (2j - 2κ - m - 1)`. Used for the exact tail
/// `∫_X^∞ x^m (1 + c x²)^κ dx = X^{m+1} u^κ Σ_j binom(κ, j) u^{-j} / (2j - 2κ - m - 1)`,
/// `u = c X²`, valid for `u > 1` and `m + 2κ < -1`.
fn tail_integral(kappa: f64, c: f64, m: f64, x: f64) -> f64 {
    let u = c * x * x;
    let log_lead = (m + 1.0) * x.ln() + kappa * u.ln();
    if log_lead < -745.0 {
        return 0.0;
    }
    let mut coef = 1.0;
    let mut upow = 1.0;
    let mut sum = 0.0;
    for j in 0..400 {
        let jf = j as f64;
        let term = coef * upow / (2.0 * jf - 2.0 * kappa - m - 1.0);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() && j > 0 {
            break;
        }
        coef *= (kappa - jf) / (jf + 1.0);
        upow /= u;
    }
    log_lead.exp() * sum
}

impl PowerLaw {
    pub fn new(kappa: f64, c: f64) -> Result<Self> {
        if !(kappa < -0.5) {
            return Err(Error::NonNormalizable { kappa });
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("c = rho/sigma must be > 0"));
        }
        let z = (std::f64::consts::PI / c).sqrt() * special::gamma_ratio(-kappa - 0.5, -kappa);
        Ok(PowerLaw { kappa, c, z })
    }

    pub fn from_coord(p: &CoordParams) -> Result<Self> {
        let kappa = p.tail_index().ok_or(Error::TailIndexUndefined { coord: 0 })?;
        Self::new(kappa, p.rho / p.sigma)
    }

    /// Degrees of freedom `ν = -2κ - 1` of the equivalent Student-t.
    pub fn nu(&self) -> f64 {
        -2.0 * self.kappa - 1.0
    }

    /// Natural width of the density.
    pub fn scale(&self) -> f64 {
        1.0 / (self.c * self.nu()).sqrt()
    }

    #[inline]
    pub fn kernel(&self, x: f64) -> f64 {
        (self.kappa * (self.c * x * x).ln_1p()).exp()
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        self.kernel(x) / self.z
    }

    pub fn phi(&self) -> PhiFactor {
        PhiFactor { kappa: self.kappa, c: self.c }
    }

    /// Cut-off beyond which the binomial tail series is used.
    fn cutoff(&self) -> f64 {
        let u = 1e4f64.max(100.0 * self.kappa.abs());
        (u / self.c).sqrt()
    }

    /// `2 ∫_0^∞ x^m (1 + c x²)^κ dx` by adaptive quadrature on `[0, X]`
    /// plus the exact tail series.
    fn even_integral(&self, m: f64, tol: Tolerance) -> Result<f64> {
        let x_cut = self.cutoff();
        let f = |x: f64| if m == 0.0 { self.kernel(x) } else { x.powf(m) * self.kernel(x) };
        let mut total = 0.0;
        let mut lo = 0.0;
        let mut hi = self.scale();
        loop {
            let top = hi.min(x_cut);
            // outer windows can underflow; measure them against the running total
            let r = quad::integrate(f, lo, top, tol.with_abs(tol.rel * total));
            if !r.converged {
                return Err(Error::pre(format!("quadrature did not converge on [{lo}, {top}]")));
            }
            total += r.value;
            if top >= x_cut {
                break;
            }
            lo = top;
            hi *= 10.0;
        }
        Ok(2.0 * (total + tail_integral(self.kappa, self.c, m, x_cut)))
    }

    pub fn z_quadrature(&self) -> Result<f64> {
        self.even_integral(0.0, Tolerance::rel(1e-13))
    }

    /// `E x^{2k}` from the Gamma-function identity.
    pub fn moment_closed_form(&self, order: u32) -> Option<f64> {
        let k = (order / 2) as f64;
        if order % 2 != 0 || (order as f64) + 2.0 * self.kappa >= -1.0 {
            return None;
        }
        let a = -self.kappa - 0.5;
        let num = special::ln_gamma(k + 0.5) + special::ln_gamma(a - k);
        let den = special::ln_gamma(0.5) + special::ln_gamma(a);
        Some(self.c.powf(-k) * (num - den).exp())
    }

    pub fn variance(&self) -> Option<f64> {
        (self.kappa < -1.5).then(|| 1.0 / (self.c * (-2.0 * self.kappa - 3.0)))
    }
}

/// Stationary law of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoordLaw {
    PowerLaw(PowerLaw),
    Gaussian { variance: f64 },
}

impl CoordLaw {
    pub fn new(params: &DecoupledParams, i: usize) -> Result<Self> {
        if i >= params.dim() {
            return Err(Error::invalid(format!("coordinate {i} out of range for dimension {}", params.dim())));
        }
        let p = params.coord(i);
        if p.rho == 0.0 {
            Ok(CoordLaw::Gaussian { variance: p.eta * p.sigma / (2.0 * p.h) })
        } else {
            PowerLaw::from_coord(&p).map(CoordLaw::PowerLaw).map_err(|e| match e {
                Error::TailIndexUndefined { .. } => Error::TailIndexUndefined { coord: i },
                e => e,
            })
        }
    }

    pub fn kind(&self) -> LawKind {
        match self {
            CoordLaw::PowerLaw(_) => LawKind::PowerLaw,
            CoordLaw::Gaussian { .. } => LawKind::Gaussian,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            CoordLaw::PowerLaw(p) => p.pdf(x),
            CoordLaw::Gaussian { variance } => {
                (-0.5 * x * x / variance).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
            }
        }
    }
}

/// Density of coordinate `i` at `x`. Dispatches to the Gaussian OU law
/// when `ρ_i = 0`; use [`CoordLaw::kind`] to see which law applied.
pub fn density(params: &DecoupledParams, i: usize, x: f64) -> Result<f64> {
    Ok(CoordLaw::new(params, i)?.pdf(x))
}

pub fn joint_density(params: &DecoupledParams, x: &[f64]) -> Result<f64> {
    let mut p = 1.0;
    for (i, &xi) in x.iter().enumerate() {
        p *= density(params, i, xi)?;
    }
    Ok(p)
}

pub fn normalizing_constant(params: &DecoupledParams, i: usize, method: ZMethod) -> Result<f64> {
    let p = params.coord(i);
    if p.rho == 0.0 {
        return Err(Error::TailIndexUndefined { coord: i });
    }
    let law = PowerLaw::from_coord(&p)?;
    match method {
        ZMethod::ClosedForm => Ok(law.z),
        ZMethod::Quadrature => law.z_quadrature(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Moment {
    Finite(f64),
    Infinite,
}

impl Moment {
    pub fn value(&self) -> Option<f64> {
        match self {
            Moment::Finite(v) => Some(*v),
            Moment::Infinite => None,
        }
    }
}

pub fn stationary_moment(params: &DecoupledParams, i: usize, order: u32) -> Result<Moment> {
    if order % 2 != 0 {
        return Err(Error::pre(format!("moment order must be even, got {order}")));
    }
    if order == 0 {
        return Ok(Moment::Finite(1.0));
    }
    match CoordLaw::new(params, i)? {
        CoordLaw::Gaussian { variance } => {
            let double_fact: f64 = (1..order).step_by(2).map(|k| k as f64).product();
            Ok(Moment::Finite(variance.powi(order as i32 / 2) * double_fact))
        }
        CoordLaw::PowerLaw(law) => {
            if !crate::model::moment_finite(law.kappa, order)? {
                return Ok(Moment::Infinite);
            }
            let integral = law.even_integral(order as f64, Tolerance::rel(1e-12))?;
            Ok(Moment::Finite(integral / law.z))
        }
    }
}

const CENTRAL6: [f64; 3] = [45.0 / 60.0, -9.0 / 60.0, 1.0 / 60.0];

fn deriv6(f: &[f64], i: usize, dx: f64) -> f64 {
    let mut s = 0.0;
    for (k, w) in CENTRAL6.iter().enumerate() {
        s += w * (f[i + k + 1] - f[i - k - 1]);
    }
    s / dx
}

/// Maximum of `|R(x)|` with `R = d/dx[(h + ηρ) x p] + d/dx[(σ²(x)/2) p']`,
/// `σ²(x) = ησ + ηρx²`, over the interior of a uniform grid. Derivatives
/// use sixth-order central differences (flux first, then its derivative),
/// so the six outermost points on each side are excluded.
pub fn fp_residual(params: &DecoupledParams, i: usize, grid: &[f64], values: &[f64]) -> Result<f64> {
    let n = grid.len();
    if values.len() != n {
        return Err(Error::pre("grid and values must have equal length"));
    }
    if n < 13 {
        return Err(Error::pre("fp_residual needs at least 13 grid points"));
    }
    let dx = (grid[n - 1] - grid[0]) / (n - 1) as f64;
    if !(dx > 0.0) {
        return Err(Error::pre("grid must be increasing"));
    }
    for k in 1..n {
        let step = grid[k] - grid[k - 1];
        if (step - dx).abs() > 1e-9 * dx {
            return Err(Error::pre("grid must be uniform"));
        }
    }
    if let Some(k) = (1..n - 1).find(|&k| !(values[k] > 0.0)) {
        return Err(Error::pre(format!("candidate density must be positive (index {k})")));
    }
    let p = params.coord(i);
    let drift = p.h + p.eta * p.rho;
    let mut flux = vec![0.0; n];
    for k in 3..n - 3 {
        let x = grid[k];
        flux[k] = drift * x * values[k] + 0.5 * p.diffusion_sq(x) * deriv6(values, k, dx);
    }
    let mut worst = 0.0f64;
    for k in 6..n - 6 {
        worst = worst.max(deriv6(&flux, k, dx).abs());
    }
    Ok(worst)
}

/// Tabulated two-sided survival `S(x) = P(|X| > x)` on sinh-spaced nodes,
/// used for the CDF and for inverse-CDF sampling.
#[derive(Debug, Clone)]
pub struct SurvivalTable {
    law: PowerLaw,
    z: f64,
    x: Vec<f64>,
    ln_s: Vec<f64>,
    slope: Vec<f64>,
}

const TABLE_CELLS: usize = 4096;

impl SurvivalTable {
    pub fn new(law: PowerLaw) -> Self {
        let s0 = law.scale();
        let x_max = (1e4 * s0).max(law.cutoff());
        let t_max = (x_max / s0).asinh();
        let x: Vec<f64> = (0..=TABLE_CELLS).map(|k| s0 * (t_max * k as f64 / TABLE_CELLS as f64).sinh()).collect();
        let kernel = |v: f64| law.kernel(v);
        let cells: Vec<f64> = x.windows(2).map(|w| quad::gk15(&kernel, w[0], w[1]).0).collect();
        // Integrals of the kernel over [x_k, ∞), summed from the tail inward.
        let mut upper = vec![0.0; TABLE_CELLS + 1];
        upper[TABLE_CELLS] = tail_integral(law.kappa, law.c, 0.0, x_max);
        for k in (0..TABLE_CELLS).rev() {
            upper[k] = upper[k + 1] + cells[k];
        }
        let z = 2.0 * upper[0];
        let ln_s: Vec<f64> = upper.iter().map(|u| (2.0 * u / z).ln()).collect();
        let mut slope: Vec<f64> = (0..=TABLE_CELLS)
            .map(|k| -(2.0 * upper[k] / z) / (2.0 * law.kernel(x[k]) / z))
            .collect();
        // Fritsch–Carlson limiting keeps x(ln S) monotone between nodes.
        for k in 0..TABLE_CELLS {
            let delta = (x[k + 1] - x[k]) / (ln_s[k + 1] - ln_s[k]);
            let a = slope[k] / delta;
            let b = slope[k + 1] / delta;
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                slope[k] = tau * a * delta;
                slope[k + 1] = tau * b * delta;
            }
        }
        SurvivalTable { law, z, x, ln_s, slope }
    }

    pub fn law(&self) -> &PowerLaw {
        &self.law
    }

    /// Normalizer implied by the table (cell quadrature plus tail series).
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn survival(&self, x: f64) -> f64 {
        let x = x.abs();
        let n = self.x.len() - 1;
        if x >= self.x[n] {
            return 2.0 * tail_integral(self.law.kappa, self.law.c, 0.0, x) / self.z;
        }
        let k = self.x.partition_point(|&v| v <= x) - 1;
        let kernel = |v: f64| self.law.kernel(v);
        let part = quad::gk15(&kernel, x, self.x[k + 1]).0;
        self.ln_s[k + 1].exp() + 2.0 * part / self.z
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let s = self.survival(x);
        if x >= 0.0 {
            1.0 - 0.5 * s
        } else {
            0.5 * s
        }
    }

    /// Point `x ≥ 0` with `S(x) = s`.
    pub fn inverse_survival(&self, s: f64) -> f64 {
        if s >= 1.0 {
            return 0.0;
        }
        let ls = s.ln();
        let n = self.x.len() - 1;
        if ls >= self.ln_s[n] {
            // ln_s is decreasing in k.
            let k = self.ln_s.partition_point(|&v| v > ls).max(1) - 1;
            let (l0, l1) = (self.ln_s[k], self.ln_s[k + 1]);
            let h = l1 - l0;
            let t = (ls - l0) / h;
            let (t2, t3) = (t * t, t * t * t);
            return (2.0 * t3 - 3.0 * t2 + 1.0) * self.x[k]
                + (t3 - 2.0 * t2 + t) * h * self.slope[k]
                + (-2.0 * t3 + 3.0 * t2) * self.x[k + 1]
                + (t3 - t2) * h * self.slope[k + 1];
        }
        // Newton in ln x on ln S(x) beyond the table.
        let kappa = self.law.kappa;
        let mut lx = self.x[n].ln() + (ls - self.ln_s[n]) / (2.0 * kappa + 1.0);
        for _ in 0..50 {
            let x = lx.exp();
            let sx = 2.0 * tail_integral(kappa, self.law.c, 0.0, x) / self.z;
            let dlog = -2.0 * self.law.kernel(x) / self.z * x / sx;
            let step = (sx.ln() - ls) / dlog;
            lx -= step;
            if step.abs() < 1e-14 {
                break;
            }
        }
        lx.exp()
    }

    /// Quantile for a uniform `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let upper = u >= 0.5;
        let s = 2.0 * if upper { 1.0 - u } else { u };
        let x = self.inverse_survival(s);
        if upper {
            x
        } else {
            -x
        }
    }

    /// Draw from 64 random bits: the top bit is the sign and the other 63
    /// give the two-sided survival level `s ∈ (0, 1)`. Flipping the top bit
    /// mirrors the sample exactly.
    pub fn sample_from_bits(&self, bits: u64) -> f64 {
        let x = self.inverse_survival(crate::rng::bits_to_open01(bits << 1));
        if bits >> 63 == 1 {
            -x
        } else {
            x
        }
    }
}

/// CDF of coordinate `i`.
pub enum Cdf {
    PowerLaw(Box<SurvivalTable>),
    Gaussian { sd: f64 },
}

impl Cdf {
    pub fn new(law: CoordLaw) -> Self {
        match law {
            CoordLaw::PowerLaw(p) => Cdf::PowerLaw(Box::new(SurvivalTable::new(p))),
            CoordLaw::Gaussian { variance } => Cdf::Gaussian { sd: variance.sqrt() },
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Cdf::PowerLaw(t) => t.cdf(x),
            Cdf::Gaussian { sd } => 0.5 * libm::erfc(-x / (sd * std::f64::consts::SQRT_2)),
        }
    }
}

/// `n` draws from the stationary law, one column per coordinate
/// (`samples[j][i]`). Power-law coordinates use the inverse CDF applied to
/// 64-bit word `j` of stream `(seed, i, Aux)` (see
/// [`SurvivalTable::sample_from_bits`]); Gaussian coordinates use normal `j`
/// of the same stream.
pub fn sample_stationary(params: &DecoupledParams, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let d = params.dim();
    let mut columns = Vec::with_capacity(d);
    for i in 0..d {
        columns.push(sample_coordinate(&CoordLaw::new(params, i)?, n, seed, i as u32));
    }
    Ok((0..n).map(|j| columns.iter().map(|c| c[j]).collect()).collect())
}

const SAMPLE_CHUNK: usize = 4096;

pub fn sample_coordinate(law: &CoordLaw, n: usize, seed: u64, stream: u32) -> Vec<f64> {
    let mut out = vec![0.0; n];
    match law {
        CoordLaw::PowerLaw(p) => {
            let table = SurvivalTable::new(*p);
            out.par_chunks_mut(SAMPLE_CHUNK).enumerate().for_each(|(c, chunk)| {
                let mut s = Stream::new(seed, stream, Lane::Aux);
                for (k, v) in chunk.iter_mut().enumerate() {
                    *v = table.sample_from_bits(s.u64_at((c * SAMPLE_CHUNK + k) as u64));
                }
            });
        }
        CoordLaw::Gaussian { variance } => {
            let sd = variance.sqrt();
            out.par_chunks_mut(SAMPLE_CHUNK).enumerate().for_each(|(c, chunk)| {
                let mut s = Stream::new(seed, stream, Lane::Aux);
                for (k, v) in chunk.iter_mut().enumerate() {
                    *v = sd * s.normal((c * SAMPLE_CHUNK + k) as u64);
                }
            });
        }
    }
    out
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and
/// `cdf`, evaluated on both sides of every jump.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::pre("ks_statistic needs at least one sample"));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::pre("samples contain NaN"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (k, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((k + 1) as f64 / n - f).max(f - k as f64 / n);
    }
    Ok(d)
}

/// Tabulated density of one coordinate on a symmetric uniform grid.
#[derive(Debug, Clone, Serialize)]
pub struct DensityTable {
    pub coord: usize,
    pub law: CoordLaw,
    pub grid: Vec<f64>,
    pub pdf: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl DensityTable {
    pub fn build(params: &DecoupledParams, coord: usize, half_width: f64, n_points: usize) -> Result<Self> {
        if !(half_width > 0.0) || n_points < 3 {
            return Err(Error::pre("density grid needs half_width > 0 and at least 3 points"));
        }
        let law = CoordLaw::new(params, coord)?;
        let cdf_fn = Cdf::new(law);
        let dx = 2.0 * half_width / (n_points - 1) as f64;
        let grid: Vec<f64> = (0..n_points)
            .map(|k| {
                // Mirror the lower half so the grid is exactly symmetric.
                let j = k.min(n_points - 1 - k);
                let x = half_width - j as f64 * dx;
                if k < n_points - 1 - k {
                    -x
                } else {
                    x
                }
            })
            .collect();
        let pdf = grid.iter().map(|&x| law.pdf(x)).collect();
        let cdf = grid.iter().map(|&x| cdf_fn.eval(x)).collect();
        Ok(DensityTable { coord, law, grid, pdf, cdf })
    }

    /// Trapezoid mass of the table plus the exact mass outside the grid.
    pub fn total_mass(&self) -> f64 {
        let mut m = 0.0;
        for k in 1..self.grid.len() {
            m += 0.5 * (self.pdf[k] + self.pdf[k - 1]) * (self.grid[k] - self.grid[k - 1]);
        }
        let edge = *self.grid.last().unwrap();
        let outside = match self.law {
            CoordLaw::PowerLaw(p) => SurvivalTable::new(p).survival(edge),
            CoordLaw::Gaussian { variance } => libm::erfc(edge / (2.0 * variance).sqrt()),
        };
        m + outside
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,pdf,cdf\n");
        for k in 0..self.grid.len() {
            s.push_str(&format!("{:e},{:e},{:e}\n", self.grid[k], self.pdf[k], self.cdf[k]));
        }
        s
    }
}
