//! Distances and estimators over sample sets.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{Lane, Stream};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub scheme: String,
    pub time: f64,
    pub seed: u64,
}

/// `n` points in `d` dimensions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    values: Vec<f64>,
    dim: usize,
    pub provenance: Option<Provenance>,
}

impl SampleSet {
    pub fn new(values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || values.is_empty() || values.len() % dim != 0 {
            return Err(Error::pre("sample set must be non-empty with length divisible by dim"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::pre("sample set has non-finite entries"));
        }
        Ok(SampleSet { values, dim, provenance: None })
    }

    pub fn from_1d(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 1)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::pre("rows must all have the same length"));
        }
        Self::new(rows.concat(), dim)
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = Some(p);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn project(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|k| self.row(k).iter().zip(u).map(|(a, b)| a * b).sum()).collect()
    }
}

/// Seed of the subsampling used when two sets differ in size.
pub const SUBSAMPLE_SEED: u64 = 0x5eed_0f_2a11;

/// Picks `m` of `xs` without replacement, keeping their original order.
fn subsample(xs: &[f64], m: usize, seed: u64) -> Vec<f64> {
    let n = xs.len();
    let mut stream = Stream::new(seed, 0, Lane::Aux);
    let mut cursor = 0;
    let mut keep = vec![false; n];
    for j in (n - m)..n {
        let t = stream.below(j as u64 + 1, &mut cursor) as usize;
        if keep[t] {
            keep[j] = true;
        } else {
            keep[t] = true;
        }
    }
    xs.iter().zip(keep).filter(|(_, k)| *k).map(|(x, _)| *x).collect()
}

fn w2_sorted(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}

fn w2_values(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Equal => (a.to_vec(), b.to_vec()),
        std::cmp::Ordering::Greater => (subsample(a, b.len(), SUBSAMPLE_SEED), b.to_vec()),
        std::cmp::Ordering::Less => (a.to_vec(), subsample(b, a.len(), SUBSAMPLE_SEED)),
    };
    w2_sorted(a, b)
}

/// Exact 1-D Wasserstein-2 distance between empirical measures of equal
/// size, `sqrt(mean((a_(k) - b_(k))²))` over order statistics. A larger set
/// is first reduced to the smaller size by seeded subsampling
/// ([`SUBSAMPLE_SEED`]).
pub fn w2_empirical_1d(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    if a.dim != 1 || b.dim != 1 {
        return Err(Error::pre("w2_empirical_1d needs one-dimensional samples"));
    }
    Ok(w2_values(&a.values, &b.values))
}

pub const DEFAULT_PROJECTIONS: usize = 256;

/// Unit direction number `k` for `sliced_w2`: normals `0..d` of stream
/// `(seed, k, Projection)`, normalized.
pub fn projection_direction(seed: u64, k: usize, dim: usize) -> Vec<f64> {
    let mut s = Stream::new(seed, k as u32, Lane::Projection);
    let mut u: Vec<f64> = (0..dim as u64).map(|i| s.normal(i)).collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().for_each(|x| *x /= norm);
    u
}

/// Mean of 1-D W2 distances between projections on `n_projections` random
/// directions. A proxy that never exceeds the true W2; one-dimensional
/// inputs fall back to [`w2_empirical_1d`].
pub fn sliced_w2(a: &SampleSet, b: &SampleSet, n_projections: usize, seed: u64) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::pre("sample sets differ in dimension"));
    }
    if a.dim == 1 {
        return w2_empirical_1d(a, b);
    }
    if n_projections == 0 {
        return Err(Error::pre("n_projections must be >= 1"));
    }
    let per: Vec<f64> = (0..n_projections)
        .into_par_iter()
        .map(|k| {
            let u = projection_direction(seed, k, a.dim);
            w2_values(&a.project(&u), &b.project(&u))
        })
        .collect();
    Ok(per.iter().sum::<f64>() / n_projections as f64)
}

/// Least squares of `y` on `[1, x]`, returning `(intercept, slope, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (intercept, slope, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `ln Ê r(t) = intercept + slope t`.
pub fn contraction_fit(times: &[f64], mean_r: &[f64]) -> Result<ContractionFit> {
    if times.len() != mean_r.len() {
        return Err(Error::pre("times and mean_r differ in length"));
    }
    if times.len() < 5 {
        return Err(Error::pre("contraction_fit needs at least 5 recorded times"));
    }
    if let Some(k) = mean_r.iter().position(|&r| !(r > 0.0)) {
        return Err(Error::DegenerateCoupling { time: times[k] });
    }
    let logs: Vec<f64> = mean_r.iter().map(|r| r.ln()).collect();
    let (intercept, slope, r_squared) = linear_fit(times, &logs);
    Ok(ContractionFit { slope, intercept, r_squared })
}

/// Per-coordinate mean of `x^order`.
pub fn empirical_moment(samples: &SampleSet, order: u32) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::pre("empirical_moment needs samples"));
    }
    let n = samples.len() as f64;
    let mut m = vec![0.0; samples.dim];
    for k in 0..samples.len() {
        for (acc, x) in m.iter_mut().zip(samples.row(k)) {
            *acc += x.powi(order as i32);
        }
    }
    m.iter_mut().for_each(|v| *v /= n);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(v: &[f64]) -> SampleSet {
        SampleSet::from_1d(v.to_vec()).unwrap()
    }

    #[test]
    fn w2_identity_and_shift() {
        let a = set(&[0.3, -1.0, 2.5, 0.0]);
        assert_eq!(w2_empirical_1d(&a, &a).unwrap(), 0.0);
        let b = set(&[1.0, -0.3, 3.2, 0.7]);
        assert!((w2_empirical_1d(&a, &b).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn w2_gaussian_shift() {
        let mut s = Stream::new(1, 0, Lane::Main);
        let mut t = Stream::new(2, 0, Lane::Main);
        let n = 100_000u64;
        let a = set(&(0..n).map(|k| s.normal(k)).collect::<Vec<_>>());
        let b = set(&(0..n).map(|k| 1.0 + t.normal(k)).collect::<Vec<_>>());
        let w = w2_empirical_1d(&a, &b).unwrap();
        assert!((w - 1.0).abs() < 0.02, "{w}");
    }

    #[test]
    fn unequal_sizes_subsample() {
        let a = set(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = set(&[0.0, 1.0, 2.0]);
        let w1 = w2_empirical_1d(&a, &b).unwrap();
        let w2 = w2_empirical_1d(&b, &a).unwrap();
        assert_eq!(w1, w2);
        assert!(w1.is_finite());
    }

    #[test]
    fn sliced_examples() {
        let rows: Vec<Vec<f64>> = (0..200).map(|k| vec![(k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()]).collect();
        let a = SampleSet::from_rows(&rows).unwrap();
        assert_eq!(sliced_w2(&a, &a, 64, 3).unwrap(), 0.0);

        let e = [0.7 / 2f64.sqrt(), 0.7 / 2f64.sqrt()];
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] + e[0], r[1] + e[1]]).collect();
        let b = SampleSet::from_rows(&shifted).unwrap();
        let got = sliced_w2(&a, &b, 256, 9).unwrap();
        // A pure translation projects to a translation by |<u, e>|.
        let brute: f64 = (0..256)
            .map(|k| {
                let u = projection_direction(9, k, 2);
                (u[0] * e[0] + u[1] * e[1]).abs()
            })
            .sum::<f64>()
            / 256.0;
        assert!((got - brute).abs() < 1e-12, "{got} vs {brute}");
        // E|<u, e>| = 2|e|/π for uniform directions in the plane.
        assert!((brute - 1.4 / std::f64::consts::PI).abs() < 0.03);

        let mut rev = rows.clone();
        rev.reverse();
        let c = SampleSet::from_rows(&rev).unwrap();
        assert!((sliced_w2(&c, &b, 32, 1).unwrap() - sliced_w2(&a, &b, 32, 1).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn contraction_fit_exact() {
        let t: Vec<f64> = (0..10).map(|k| k as f64 * 0.2).collect();
        let r: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        let f = contraction_fit(&t, &r).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let mut z = r.clone();
        z[0] = 0.0;
        assert!(matches!(contraction_fit(&t, &z), Err(Error::DegenerateCoupling { .. })));
    }

    #[test]
    fn moments() {
        let s = set(&[3.0; 5]);
        assert_eq!(empirical_moment(&s, 2).unwrap(), vec![9.0]);
        assert_eq!(empirical_moment(&s, 0).unwrap(), vec![1.0]);
    }

    proptest! {
        #[test]
        fn w2_is_a_metric(
            a in proptest::collection::vec(-10.0..10.0f64, 12),
            b in proptest::collection::vec(-10.0..10.0f64, 12),
            c in proptest::collection::vec(-10.0..10.0f64, 12),
        ) {
            let (sa, sb, sc) = (set(&a), set(&b), set(&c));
            let ab = w2_empirical_1d(&sa, &sb).unwrap();
            let ba = w2_empirical_1d(&sb, &sa).unwrap();
            let ac = w2_empirical_1d(&sa, &sc).unwrap();
            let cb = w2_empirical_1d(&sc, &sb).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab <= ac + cb + 1e-12);
            let mut sorted_a = a.clone();
            sorted_a.sort_by(f64::total_cmp);
            let mut sorted_b = b.clone();
            sorted_b.sort_by(f64::total_cmp);
            prop_assert_eq!(ab == 0.0, sorted_a == sorted_b);
        }
    }
}
