use serde::Serialize;

use super::Domain;
use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;
use crate::model::DecoupledParams;

/// Solves `a2(x) g'' + a1(x) g' = -1`, `g(a) = g(b) = 0` with second-order
/// central differences on `n` uniform nodes. Returns `(grid, g)`.
pub fn solve_exit_bvp<A2, A1>(a2: A2, a1: A1, a: f64, b: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)>
where
    A2: Fn(f64) -> f64,
    A1: Fn(f64) -> f64,
{
    if n < 5 {
        return Err(Error::invalid("n_grid must be >= 5"));
    }
    if !(a < b) {
        return Err(Error::invalid("domain must satisfy a < b"));
    }
    let dx = (b - a) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|k| if k == n - 1 { b } else { a + k as f64 * dx }).collect();
    let m = n - 2;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let rhs = vec![-1.0; m];
    for i in 0..m {
        let x = grid[i + 1];
        let c2 = a2(x) / (dx * dx);
        let c1 = a1(x) / (2.0 * dx);
        lower[i] = c2 - c1;
        diag[i] = -2.0 * c2;
        upper[i] = c2 + c1;
    }
    let inner = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    let mut g = vec![0.0; n];
    g[1..n - 1].copy_from_slice(&inner);
    Ok((grid, g))
}

/// Four-point Lagrange interpolation on a uniform grid.
fn interpolate(grid: &[f64], g: &[f64], x: f64) -> f64 {
    let n = grid.len();
    let dx = grid[1] - grid[0];
    let k = ((x - grid[0]) / dx).round() as usize;
    if k < n && (grid[k] - x).abs() <= 1e-12 * dx {
        return g[k];
    }
    let j = (((x - grid[0]) / dx).floor() as usize).saturating_sub(1).min(n - 4);
    let mut sum = 0.0;
    for i in j..j + 4 {
        let mut l = 1.0;
        for m in j..j + 4 {
            if m != i {
                l *= (x - grid[m]) / (grid[i] - grid[m]);
            }
        }
        sum += l * g[i];
    }
    sum
}

/// Mean exit time from the boundary-value problem
/// `½σ²(x) g'' - h x g' = -1` on an `n_grid`-point uniform grid.
pub fn exit_time_ode_oracle(params: &DecoupledParams, domain: &Domain, x0: f64, n_grid: usize) -> Result<f64> {
    let (a, b) = domain
        .interval(params.dim())
        .ok_or_else(|| Error::pre("the boundary-value oracle needs a one-dimensional domain"))?;
    if !(a..=b).contains(&x0) {
        return Err(Error::invalid("x0 must lie in [a, b]"));
    }
    let p = params.coord(0);
    let (grid, g) = solve_exit_bvp(|x| 0.5 * p.diffusion_sq(x), |x| -p.h * x, a, b, n_grid)?;
    Ok(interpolate(&grid, &g, x0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Richardson {
    /// Values on `n`, `2n - 1` and `4n - 3` nodes.
    pub values: [f64; 3],
    /// `(g_n - g_2n) / (g_2n - g_4n)`; near 4 for a second-order scheme.
    pub ratio: f64,
    pub extrapolated: f64,
}

pub fn ode_richardson(params: &DecoupledParams, domain: &Domain, x0: f64, n_grid: usize) -> Result<Richardson> {
    let g1 = exit_time_ode_oracle(params, domain, x0, n_grid)?;
    let g2 = exit_time_ode_oracle(params, domain, x0, 2 * n_grid - 1)?;
    let g3 = exit_time_ode_oracle(params, domain, x0, 4 * n_grid - 3)?;
    Ok(Richardson { values: [g1, g2, g3], ratio: (g1 - g2) / (g2 - g3), extrapolated: g3 + (g3 - g2) / 3.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_closed_form() {
        // ½ g'' = -1 on [a, b]: g = (x - a)(b - x); quadratic, so exact on any grid.
        let (grid, g) = solve_exit_bvp(|_| 0.5, |_| 0.0, -1.0, 1.0, 21).unwrap();
        for (x, v) in grid.iter().zip(&g) {
            assert!((v - (x + 1.0) * (1.0 - x)).abs() < 1e-12);
        }
        assert!((interpolate(&grid, &g, 0.0) - 1.0).abs() < 1e-12);
        assert!((interpolate(&grid, &g, 0.033) - (1.033 * 0.967)).abs() < 1e-12);
    }

    #[test]
    fn second_order_convergence() {
        let p = DecoupledParams::scalar(1.0, 1.0, 1.0, 0.5).unwrap();
        let r = ode_richardson(&p, &Domain::Interval { a: -1.0, b: 1.0 }, 0.0, 101).unwrap();
        assert!((r.ratio - 4.0).abs() < 0.2, "{r:?}");
    }

    #[test]
    fn agrees_with_quadrature() {
        let p = DecoupledParams::scalar(1.0, 1.0, 1.0, 0.3).unwrap();
        let d = Domain::Interval { a: -0.5, b: 1.0 };
        let q = super::super::exit_time_quadrature(&p, &d, 0.2).unwrap().value;
        let o = exit_time_ode_oracle(&p, &d, 0.2, 8001).unwrap();
        assert!((q - o).abs() < 1e-6 * q, "{q} vs {o}");
    }
}
