//! Parameters of the power-law dynamic
//! `dv = -H v dt + sqrt(eta * Σ_g (1 + vᵀ Σ_H v)) dB`
//! and of its coordinatewise (decoupled) form
//! `dv_i = -h_i v_i dt + sqrt(eta σ_i + eta ρ_i v_i²) dB_i`,
//! together with the constants that govern tails and contraction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Coupled d-dimensional dynamic, centered at the minimizer `w_star`.
#[derive(Debug, Clone)]
pub struct FullParams {
    hessian: DMatrix<f64>,
    sigma_g: DMatrix<f64>,
    sigma_h: DMatrix<f64>,
    w_star: Vec<f64>,
    eta: f64,
    sqrt_sigma_g: DMatrix<f64>,
}

impl FullParams {
    pub fn new(
        hessian: &[Vec<f64>],
        sigma_g: &[Vec<f64>],
        sigma_h: &[Vec<f64>],
        w_star: Vec<f64>,
        eta: f64,
    ) -> Result<Self> {
        Self::from_matrices(
            linalg::from_rows(hessian, "hessian")?,
            linalg::from_rows(sigma_g, "sigma_g")?,
            linalg::from_rows(sigma_h, "sigma_h")?,
            w_star,
            eta,
        )
    }

    pub fn from_matrices(
        hessian: DMatrix<f64>,
        sigma_g: DMatrix<f64>,
        sigma_h: DMatrix<f64>,
        w_star: Vec<f64>,
        eta: f64,
    ) -> Result<Self> {
        check_eta(eta)?;
        let d = hessian.nrows();
        for (m, name) in [(&sigma_g, "sigma_g"), (&sigma_h, "sigma_h")] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::invalid(format!("{name} must be {d}x{d} to match hessian")));
            }
        }
        if w_star.len() != d {
            return Err(Error::invalid(format!("w_star must have length {d}")));
        }
        if w_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("w_star must be finite"));
        }
        let hessian = linalg::symmetrize(&hessian, "hessian")?;
        let sigma_g = linalg::symmetrize(&sigma_g, "sigma_g")?;
        let sigma_h = linalg::symmetrize(&sigma_h, "sigma_h")?;
        for (m, name) in [(&hessian, "hessian"), (&sigma_g, "sigma_g"), (&sigma_h, "sigma_h")] {
            let lo = linalg::min_eigenvalue(m);
            if lo <= 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be positive definite (smallest eigenvalue {lo:e})"
                )));
            }
        }
        let sqrt_sigma_g = linalg::sqrt_psd(&sigma_g)?;
        Ok(FullParams { hessian, sigma_g, sigma_h, w_star, eta, sqrt_sigma_g })
    }

    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }
    pub fn sigma_g(&self) -> &DMatrix<f64> {
        &self.sigma_g
    }
    pub fn sigma_h(&self) -> &DMatrix<f64> {
        &self.sigma_h
    }
    pub fn w_star(&self) -> &[f64] {
        &self.w_star
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        Ok(FullParams { eta, ..self.clone() })
    }

    fn quad_form(&self, v: &[f64]) -> f64 {
        let d = self.dim();
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += v[i] * self.sigma_h[(i, j)] * v[j];
            }
        }
        q
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec::Full {
            eta: self.eta,
            hessian: linalg::to_rows(&self.hessian),
            sigma_g: linalg::to_rows(&self.sigma_g),
            sigma_h: linalg::to_rows(&self.sigma_h),
            w_star: Some(self.w_star.clone()),
        }
    }
}

/// Decoupled dynamic: one independent power-law diffusion per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupledParams {
    pub h: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Vec<f64>,
    pub eta: f64,
}

impl DecoupledParams {
    pub fn new(h: Vec<f64>, sigma: Vec<f64>, rho: Vec<f64>, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        let d = h.len();
        if d == 0 {
            return Err(Error::invalid("h must be non-empty"));
        }
        if sigma.len() != d || rho.len() != d {
            return Err(Error::invalid(format!("h, sigma and rho must all have length {d}")));
        }
        for i in 0..d {
            if !(h[i] > 0.0 && h[i].is_finite()) {
                return Err(Error::invalid(format!("h[{i}] must be > 0")));
            }
            if !(sigma[i] > 0.0 && sigma[i].is_finite()) {
                return Err(Error::invalid(format!("sigma[{i}] must be > 0")));
            }
            if !(rho[i] >= 0.0 && rho[i].is_finite()) {
                return Err(Error::invalid(format!("rho[{i}] must be >= 0")));
            }
        }
        Ok(DecoupledParams { h, sigma, rho, eta })
    }

    /// One-dimensional shorthand.
    pub fn scalar(h: f64, sigma: f64, rho: f64, eta: f64) -> Result<Self> {
        Self::new(vec![h], vec![sigma], vec![rho], eta)
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Self::new(self.h.clone(), self.sigma.clone(), self.rho.clone(), eta)
    }

    /// Squared diffusion `eta σ_i + eta ρ_i x²` of coordinate `i`.
    #[inline]
    pub fn diffusion_sq_at(&self, i: usize, x: f64) -> f64 {
        self.eta * (self.sigma[i] + self.rho[i] * x * x)
    }

    pub fn coord(&self, i: usize) -> CoordParams {
        CoordParams { h: self.h[i], sigma: self.sigma[i], rho: self.rho[i], eta: self.eta }
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec::Decoupled {
            eta: self.eta,
            h: self.h.clone(),
            sigma: self.sigma.clone(),
            rho: self.rho.clone(),
        }
    }
}

/// Parameters of a single decoupled coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordParams {
    pub h: f64,
    pub sigma: f64,
    pub rho: f64,
    pub eta: f64,
}

impl CoordParams {
    #[inline]
    pub fn diffusion_sq(&self, x: f64) -> f64 {
        self.eta * (self.sigma + self.rho * x * x)
    }

    pub fn tail_index(&self) -> Option<f64> {
        (self.rho > 0.0).then(|| -(self.eta * self.rho + self.h) / (self.eta * self.rho))
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("eta must be > 0"))
    }
}

/// JSON form of the model block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Full {
        eta: f64,
        hessian: Vec<Vec<f64>>,
        sigma_g: Vec<Vec<f64>>,
        sigma_h: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w_star: Option<Vec<f64>>,
    },
    Decoupled {
        eta: f64,
        h: Vec<f64>,
        sigma: Vec<f64>,
        rho: Vec<f64>,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model> {
        match self {
            ModelSpec::Full { eta, hessian, sigma_g, sigma_h, w_star } => {
                let w = w_star.clone().unwrap_or_else(|| vec![0.0; hessian.len()]);
                Ok(Model::Full(FullParams::new(hessian, sigma_g, sigma_h, w, *eta)?))
            }
            ModelSpec::Decoupled { eta, h, sigma, rho } => Ok(Model::Decoupled(DecoupledParams::new(
                h.clone(),
                sigma.clone(),
                rho.clone(),
                *eta,
            )?)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Full(FullParams),
    Decoupled(DecoupledParams),
}

impl From<FullParams> for Model {
    fn from(p: FullParams) -> Self {
        Model::Full(p)
    }
}

impl From<DecoupledParams> for Model {
    fn from(p: DecoupledParams) -> Self {
        Model::Decoupled(p)
    }
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Full(p) => p.dim(),
            Model::Decoupled(p) => p.dim(),
        }
    }

    pub fn eta(&self) -> f64 {
        match self {
            Model::Full(p) => p.eta,
            Model::Decoupled(p) => p.eta,
        }
    }

    pub fn to_spec(&self) -> ModelSpec {
        match self {
            Model::Full(p) => p.to_spec(),
            Model::Decoupled(p) => p.to_spec(),
        }
    }

    /// Drift `μ(v)` written into `out`.
    #[inline]
    pub fn drift_into(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Model::Full(p) => {
                let d = p.dim();
                for i in 0..d {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += p.hessian[(i, j)] * v[j];
                    }
                    out[i] = -s;
                }
            }
            Model::Decoupled(p) => {
                for i in 0..v.len() {
                    out[i] = -p.h[i] * v[i];
                }
            }
        }
    }

    /// Noise `σ(v) ξ` written into `out`, with `σ(v)` the symmetric square
    /// root of the diffusion matrix.
    #[inline]
    pub fn diffuse_into(&self, v: &[f64], xi: &[f64], out: &mut [f64]) {
        match self {
            Model::Full(p) => {
                // sqrt(c Σ_g) = sqrt(c) sqrt(Σ_g) for the scalar c = eta (1 + vᵀΣ_H v).
                let scale = (p.eta * (1.0 + p.quad_form(v))).sqrt();
                let d = p.dim();
                for i in 0..d {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += p.sqrt_sigma_g[(i, j)] * xi[j];
                    }
                    out[i] = scale * s;
                }
            }
            Model::Decoupled(p) => {
                for i in 0..v.len() {
                    out[i] = p.diffusion_sq_at(i, v[i]).sqrt() * xi[i];
                }
            }
        }
    }

    pub fn diffusion_sq(&self, v: &[f64]) -> DiffusionSq {
        match self {
            Model::Full(p) => DiffusionSq::Matrix(&p.sigma_g * (p.eta * (1.0 + p.quad_form(v)))),
            Model::Decoupled(p) => {
                DiffusionSq::Diagonal((0..v.len()).map(|i| p.diffusion_sq_at(i, v[i])).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionSq {
    Matrix(DMatrix<f64>),
    Diagonal(Vec<f64>),
}

impl DiffusionSq {
    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            DiffusionSq::Matrix(m) => linalg::min_eigenvalue(m),
            DiffusionSq::Diagonal(v) => v.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Centered state `v = w - w*`.
#[derive(Debug, Clone, PartialEq)]
pub struct State(Vec<f64>);

impl State {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidState(format!("coordinate {i} is not finite")));
        }
        Ok(State(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn drift_diffusion_eval(model: &Model, v: &State) -> Result<(Vec<f64>, DiffusionSq)> {
    let v = v.as_slice();
    if v.len() != model.dim() {
        return Err(Error::InvalidState(format!("state has length {}, model dimension is {}", v.len(), model.dim())));
    }
    let mut drift = vec![0.0; v.len()];
    model.drift_into(v, &mut drift);
    Ok((drift, model.diffusion_sq(v)))
}

/// Tail exponents `κ_i = -(eta ρ_i + h_i) / (eta ρ_i)` of the stationary law.
pub fn tail_index(params: &DecoupledParams) -> Result<Vec<f64>> {
    (0..params.dim())
        .map(|i| params.coord(i).tail_index().ok_or(Error::TailIndexUndefined { coord: i }))
        .collect()
}

/// Whether `∫ x^order (1 + c x²)^κ dx` converges.
pub fn moment_finite(kappa: f64, order: u32) -> Result<bool> {
    if order % 2 != 0 {
        return Err(Error::pre(format!("moment order must be even, got {order}")));
    }
    Ok((order as f64) + 2.0 * kappa < -1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionConstants {
    /// Lower bound `h_min` on the dissipativity constant θ.
    pub theta_lb: f64,
    /// Upper bound `d η g_max² H_sum` on λ.
    pub lambda_ub: f64,
    /// `2 d λ_ub - 2 θ_lb`.
    pub c_full: f64,
    /// `max_i [η ρ_i - h_i]`, decoupled inputs only.
    pub c_s: Option<f64>,
    /// `h_min / (d² g_max² H_sum)`.
    pub eta_threshold: f64,
    pub h_min: f64,
    pub g_max: f64,
    pub h_sum: f64,
}

fn constants_from(d: usize, eta: f64, h_min: f64, g_max: f64, h_sum: f64, c_s: Option<f64>) -> ContractionConstants {
    let d = d as f64;
    let lambda_ub = d * eta * g_max * g_max * h_sum;
    let denom = d * d * g_max * g_max * h_sum;
    ContractionConstants {
        theta_lb: h_min,
        lambda_ub,
        c_full: 2.0 * d * lambda_ub - 2.0 * h_min,
        c_s,
        eta_threshold: if denom > 0.0 { h_min / denom } else { f64::INFINITY },
        h_min,
        g_max,
        h_sum,
    }
}

pub fn contraction_constants(model: &Model) -> ContractionConstants {
    match model {
        Model::Full(p) => {
            let eig = SymmetricEigen::new(p.hessian.clone());
            let h_min = eig.eigenvalues.min();
            let q = eig.eigenvectors.transpose();
            let root = &q * &p.sqrt_sigma_g * q.transpose();
            let g_max = root.max();
            let h_sum = p.sigma_h.trace();
            constants_from(p.dim(), p.eta, h_min, g_max, h_sum, None)
        }
        Model::Decoupled(p) => {
            let h_min = p.h.iter().cloned().fold(f64::INFINITY, f64::min);
            let g_max = p.sigma.iter().map(|s| s.sqrt()).fold(0.0, f64::max);
            // Σ_H = diag(ρ_i / σ_i) under the folding σ_i = Σ_g,ii, ρ_i = Σ_g,ii Σ_H,ii.
            let h_sum: f64 = p.rho.iter().zip(&p.sigma).map(|(r, s)| r / s).sum();
            let c_s = (0..p.dim()).map(|i| p.eta * p.rho[i] - p.h[i]).fold(f64::NEG_INFINITY, f64::max);
            constants_from(p.dim(), p.eta, h_min, g_max, h_sum, Some(c_s))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErgodicityCheck {
    pub pass: bool,
    pub threshold: f64,
}

pub fn ergodicity_check(model: &Model) -> ErgodicityCheck {
    let threshold = contraction_constants(model).eta_threshold;
    ErgodicityCheck { pass: model.eta() < threshold, threshold }
}

const COMMUTATOR_TOL: f64 = 1e-8;
const OFFDIAG_TOL: f64 = 1e-8;

/// Simultaneously diagonalizes `H`, `Σ_g`, `Σ_H` with one orthogonal `Q`
/// (rows are the shared eigenvectors) and reads off the decoupled
/// coefficients `h_i = (QHQᵀ)_ii`, `σ_i = (QΣ_gQᵀ)_ii`,
/// `ρ_i = σ_i (QΣ_HQᵀ)_ii`.
///
/// For `d > 1` the decoupled diffusion `eta σ_i (1 + s_i v_i²)` keeps only
/// the diagonal term of `vᵀ Σ̃_H v`; the two agree exactly for `d = 1`.
pub fn decouple(p: &FullParams) -> Result<(DecoupledParams, DMatrix<f64>)> {
    let mats = [&p.hessian, &p.sigma_g, &p.sigma_h];
    let names = ["hessian", "sigma_g", "sigma_h"];
    for a in 0..3 {
        for b in (a + 1)..3 {
            let (x, y) = (mats[a], mats[b]);
            let comm = x * y - y * x;
            let scale = linalg::frobenius(x) * linalg::frobenius(y);
            let rel = linalg::frobenius(&comm) / scale;
            if rel > COMMUTATOR_TOL {
                return Err(Error::NotCodiagonalizable(format!(
                    "{} and {} do not commute (relative commutator norm {rel:.3e})",
                    names[a], names[b]
                )));
            }
        }
    }
    // A generic combination separates eigenspaces that any one matrix leaves
    // degenerate.
    let norm = |m: &DMatrix<f64>| linalg::frobenius(m).max(f64::MIN_POSITIVE);
    let combo = &p.hessian / norm(&p.hessian)
        + &p.sigma_g * (std::f64::consts::SQRT_2 / norm(&p.sigma_g))
        + &p.sigma_h * (std::f64::consts::PI / 3.0 / norm(&p.sigma_h));
    let eig = SymmetricEigen::new(combo);
    let mut order: Vec<usize> = (0..p.dim()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let d = p.dim();
    let q = DMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(j, order[i])]);

    let conj = |m: &DMatrix<f64>| &q * m * q.transpose();
    let (hh, gg, ss) = (conj(&p.hessian), conj(&p.sigma_g), conj(&p.sigma_h));
    for (m, name) in [(&hh, "hessian"), (&gg, "sigma_g"), (&ss, "sigma_h")] {
        let diag = DVector::from_iterator(d, (0..d).map(|i| m[(i, i)]));
        let off = m - DMatrix::from_diagonal(&diag);
        let rel = off.amax() / m.amax().max(f64::MIN_POSITIVE);
        if rel > OFFDIAG_TOL {
            return Err(Error::NotCodiagonalizable(format!(
                "{name} is not diagonal in the shared basis (relative off-diagonal {rel:.3e})"
            )));
        }
    }
    let h: Vec<f64> = (0..d).map(|i| hh[(i, i)]).collect();
    let sigma: Vec<f64> = (0..d).map(|i| gg[(i, i)]).collect();
    let rho: Vec<f64> = (0..d).map(|i| gg[(i, i)] * ss[(i, i)]).collect();
    Ok((DecoupledParams::new(h, sigma, rho, p.eta)?, q))
}
