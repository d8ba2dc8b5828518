use serde::Serialize;

use super::Domain;
use crate::error::{Error, Result};
use crate::model::{CoordParams, DecoupledParams};
use crate::quad::{gk15, integrate, Tolerance};

const TOL: Tolerance = Tolerance::rel(1e-11);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitIntegral {
    pub value: f64,
    pub panels: usize,
}

/// Log scale density `ln s(y) = ∫_0^y 2 h x / σ²(x) dx`.
fn log_scale(p: &CoordParams, y: f64) -> f64 {
    if p.rho > 0.0 {
        p.h / (p.eta * p.rho) * (p.rho * y * y / p.sigma).ln_1p()
    } else {
        p.h * y * y / (p.eta * p.sigma)
    }
}

/// Mean exit time of the one-dimensional diffusion from `[a, b]`.
///
/// With scale density `s`, `S_a(y) = ∫_a^y s`, `S_b(y) = ∫_y^b s` and speed
/// weight `w = 1/(σ² s)`, the solution of `½σ² g'' - h x g' = -1`,
/// `g(a) = g(b) = 0` is
/// `g(x) = 2/S [S_b(x) ∫_a^x S_a w + S_a(x) ∫_x^b S_b w]` with `S = S_a(b)`.
/// Every term is positive, so deep asymmetric wells do not cancel. `s` and
/// `w` are rescaled by reciprocal factors so neither overflows; `g` is
/// invariant under that pairing.
pub fn exit_time_quadrature(params: &DecoupledParams, domain: &Domain, x0: f64) -> Result<ExitIntegral> {
    let (a, b) = domain
        .interval(params.dim())
        .ok_or_else(|| Error::pre("quadrature exit times need a one-dimensional domain"))?;
    if !(a < b) {
        return Err(Error::invalid("domain must satisfy a < b"));
    }
    if !(a..=b).contains(&x0) {
        return Err(Error::invalid("x0 must lie in [a, b]"));
    }
    let p = params.coord(0);
    if b - a < 1e-12 || x0 == a || x0 == b {
        return Ok(ExitIntegral { value: 0.0, panels: 0 });
    }
    let lm = log_scale(&p, a).max(log_scale(&p, b));
    let shift = 0.5 * lm;
    if shift > 690.0 {
        return Err(Error::pre("exit time exceeds the floating-point range"));
    }
    let s = |y: f64| (log_scale(&p, y) - shift).exp();
    let w = |y: f64| (shift - log_scale(&p, y)).exp() / p.diffusion_sq(y);

    let scale = (p.eta * p.sigma / (p.h + p.eta * p.rho)).sqrt();
    let panels = ((20.0 * (b - a) / scale).ceil() as usize).clamp(200, 20_000);
    let node = |k: usize| if k == panels { b } else { a + (b - a) * k as f64 / panels as f64 };

    // prefix and suffix sums kept separately so neither is a difference
    let cells: Vec<f64> = (0..panels).map(|k| integrate(s, node(k), node(k + 1), TOL).value).collect();
    let mut sa = vec![0.0; panels + 1];
    let mut sb = vec![0.0; panels + 1];
    for k in 0..panels {
        sa[k + 1] = sa[k] + cells[k];
        sb[panels - 1 - k] = sb[panels - k] + cells[panels - 1 - k];
    }
    let sa_at = |k: usize, y: f64| sa[k] + gk15(&s, node(k), y).0;
    let sb_at = |k: usize, y: f64| sb[k + 1] + gk15(&s, y, node(k + 1)).0;

    let j = (((x0 - a) / (b - a) * panels as f64).floor() as usize).min(panels - 1);
    let mut left = integrate(|y| sa_at(j, y) * w(y), node(j), x0, TOL).value;
    for k in 0..j {
        left += integrate(|y| sa_at(k, y) * w(y), node(k), node(k + 1), TOL).value;
    }
    let mut right = integrate(|y| sb_at(j, y) * w(y), x0, node(j + 1), TOL).value;
    for k in j + 1..panels {
        right += integrate(|y| sb_at(k, y) * w(y), node(k), node(k + 1), TOL).value;
    }
    let value = 2.0 * (sb_at(j, x0) / sa[panels] * left + sa_at(j, x0) / sa[panels] * right);
    if !value.is_finite() {
        return Err(Error::pre("exit time exceeds the floating-point range"));
    }
    Ok(ExitIntegral { value, panels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(h: f64, sigma: f64, rho: f64, eta: f64) -> DecoupledParams {
        DecoupledParams::scalar(h, sigma, rho, eta).unwrap()
    }

    #[test]
    fn brownian_limit() {
        // Tiny drift: g(x) -> (x - a)(b - x) / (ησ).
        let p = params(1e-9, 1.0, 0.0, 2.0);
        let d = Domain::Interval { a: -1.0, b: 2.0 };
        for x in [-0.5, 0.0, 0.5, 1.7] {
            let g = exit_time_quadrature(&p, &d, x).unwrap().value;
            let exact = (x + 1.0) * (2.0 - x) / 2.0;
            assert!((g - exact).abs() < 1e-7 * exact, "{x}: {g} vs {exact}");
        }
    }

    #[test]
    fn ou_closed_inner_integral() {
        // Symmetric domain: g(0) = 2 ∫_0^r s(y) ∫_0^y w dz dy, inner part via erf.
        let (h, s2, r) = (1.0, 0.5, 1.0);
        let p = params(h, s2, 0.0, 1.0);
        let inner = |y: f64| (std::f64::consts::PI * s2 / (4.0 * h)).sqrt() * libm::erf(y * (h / s2).sqrt()) / s2;
        let n = 200_000;
        let dx = r / n as f64;
        let oracle = 2.0
            * (0..n)
                .map(|k| {
                    let y = (k as f64 + 0.5) * dx;
                    (h * y * y / s2).exp() * inner(y) * dx
                })
                .sum::<f64>();
        let g = exit_time_quadrature(&p, &Domain::Ball { r }, 0.0).unwrap().value;
        assert!((g - oracle).abs() < 1e-8 * oracle, "{g} vs {oracle}");
    }

    #[test]
    fn symmetric_and_zero_on_boundary() {
        let p = params(1.0, 1.0, 1.0, 0.1);
        let d = Domain::Interval { a: -1.0, b: 1.0 };
        let l = exit_time_quadrature(&p, &d, -0.3).unwrap().value;
        let r = exit_time_quadrature(&p, &d, 0.3).unwrap().value;
        assert!((l - r).abs() < 1e-9 * l);
        assert_eq!(exit_time_quadrature(&p, &d, 1.0).unwrap().value, 0.0);
    }

    #[test]
    fn asymmetric_deep_well() {
        // the far wall sits at ln s ≈ 380; exit happens through the near one
        let p = params(2.448, 0.2, 0.0, 0.02);
        let d = Domain::Interval { a: -0.2, b: 0.788 };
        let g = exit_time_quadrature(&p, &d, 0.42).unwrap().value;
        assert!(g.is_finite() && g > 0.0, "{g}");
        // moderate version checked against the difference scheme
        let p = params(1.0, 1.0, 0.0, 0.1);
        let d = Domain::Interval { a: -0.5, b: 2.0 };
        let g = exit_time_quadrature(&p, &d, 1.0).unwrap().value;
        let o = crate::exit::exit_time_ode_oracle(&p, &d, 1.0, 20_001).unwrap();
        assert!((g - o).abs() < 1e-5 * g, "{g} vs {o}");
    }

    #[test]
    fn rejects_bad_input() {
        let p = params(1.0, 1.0, 1.0, 0.1);
        assert!(exit_time_quadrature(&p, &Domain::Interval { a: -1.0, b: 1.0 }, 2.0).is_err());
        let p2 = DecoupledParams::new(vec![1.0; 2], vec![1.0; 2], vec![1.0; 2], 0.1).unwrap();
        assert!(exit_time_quadrature(&p2, &Domain::Ball { r: 1.0 }, 0.0).is_err());
    }
}
