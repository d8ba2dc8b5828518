use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bounds::{default_substeps, fourth_moment_bound, FinePath};
use crate::error::{Error, Result};
use crate::metrics::{w2_empirical_1d, SampleSet};
use crate::model::{DecoupledParams, Model};
use crate::simulate::{check_discretization_assumption, exploded, AssumptionCheck};

/// Paths per deterministic reduction block.
const BLOCK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandwichConfig {
    pub r: f64,
    pub step: f64,
    pub n_intervals: u64,
    pub delta: f64,
    pub delta_bar: f64,
    pub n_paths: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub x0: f64,
    pub seed: u64,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
}

fn default_checkpoints() -> usize {
    10
}

impl SandwichConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("r", self.r), ("step", self.step), ("delta", self.delta), ("delta_bar", self.delta_bar)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0")));
            }
        }
        if self.delta + self.delta_bar >= self.r {
            return Err(Error::invalid("delta + delta_bar must be < r"));
        }
        if !(self.x0.abs() < self.r - self.delta) {
            return Err(Error::invalid("x0 must satisfy |x0| < r - delta"));
        }
        if self.n_intervals == 0 {
            return Err(Error::invalid("n_intervals must be >= 1"));
        }
        if self.n_paths < 2 || u32::try_from(self.n_paths).is_err() {
            return Err(Error::invalid("n_paths must be between 2 and 2^32 - 1"));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps must be >= 1"));
        }
        if self.checkpoints == 0 {
            return Err(Error::invalid("checkpoints must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub config: SandwichConfig,
    /// `P[τ̄_r > K]` for the step-`ε` chain.
    pub p_discrete: f64,
    /// `P[τ_{r-δ} > Kε]` on the fine reference.
    pub p_cont_inner: f64,
    /// `P[τ_{r+δ+δ̄} > Kε]` on the fine reference.
    pub p_cont_outer: f64,
    /// Largest squared W2 distance between chain and reference marginals
    /// over the checkpoints.
    pub w2_sq_max: f64,
    /// `Ê(ε) = ¾ (2h - ηρ) ε · w2_sq_max`; `None` when `2h ≤ ηρ`.
    pub e_hat: Option<f64>,
    /// `(4/(3δ²)) Ê(ε) K / ((2h - ηρ) ε) = K · w2_sq_max / δ²`.
    pub corr_w2: f64,
    /// Per-interval probability of `sup |v_t - v_kε| > δ̄`.
    pub p_osc: f64,
    /// `Ĉ = p_osc δ̄⁴`.
    pub osc_constant: f64,
    /// `1 - (1 - Ĉ/δ̄⁴)^K`.
    pub corr_osc: f64,
    pub lower: f64,
    pub upper: f64,
    /// 95% sampling allowance applied to each side.
    pub slack_lower: f64,
    pub slack_upper: f64,
    pub holds: bool,
    /// Bound `D` with `b = r`; `None` when `2h ≤ ηρ`.
    pub fourth_moment_bound: Option<f64>,
    /// `max_k E[sup_interval v⁴ | v_jε ∈ B(0, r+δ) for all j ≤ K]`.
    pub fourth_moment_mc: Option<f64>,
    pub conditioned_paths: usize,
    pub fourth_moment_ok: Option<bool>,
    pub assumption: AssumptionCheck,
}

struct PathOutcome {
    z_survives: bool,
    inner_survives: bool,
    outer_survives: bool,
    osc_hits: u64,
    sup4: Option<Vec<f64>>,
    ckpt_z: Vec<f64>,
    ckpt_v: Vec<f64>,
}

fn run_path(p: &DecoupledParams, cfg: &SandwichConfig, ckpts: &[u64], path: usize) -> Result<PathOutcome> {
    let c = p.coord(0);
    let k_total = cfg.n_intervals;
    let mut fp = FinePath::new(c, cfg.step, cfg.substeps, cfg.seed, path as u32, cfg.x0);
    let norm = (cfg.substeps as f64).sqrt();
    let (r_in, r_out, r_cond) = (cfg.r - cfg.delta, cfg.r + cfg.delta + cfg.delta_bar, cfg.r + cfg.delta);
    let mut z = cfg.x0;
    let mut out = PathOutcome {
        z_survives: true,
        inner_survives: true,
        outer_survives: true,
        osc_hits: 0,
        sup4: None,
        ckpt_z: Vec::with_capacity(ckpts.len()),
        ckpt_v: Vec::with_capacity(ckpts.len()),
    };
    let mut sup4 = Vec::with_capacity(k_total as usize);
    let mut conditioned = true;
    let mut next_ckpt = 0;
    for k in 0..k_total {
        let start = fp.v;
        let mut dev: f64 = 0.0;
        let mut m4 = start.powi(4);
        let mut agg = 0.0;
        let mut max_abs: f64 = 0.0;
        fp.interval(k, |v, xi| {
            agg += xi;
            dev = dev.max((v - start).abs());
            m4 = m4.max(v.powi(4));
            max_abs = max_abs.max(v.abs());
        });
        let xi = agg / norm;
        z = z - cfg.step * c.h * z + cfg.step.sqrt() * c.diffusion_sq(z).sqrt() * xi;
        if exploded(&[fp.v, z]) {
            return Err(Error::Overflow { path, step: k + 1 });
        }
        if dev > cfg.delta_bar {
            out.osc_hits += 1;
        }
        out.inner_survives &= max_abs < r_in;
        out.outer_survives &= max_abs < r_out;
        out.z_survives &= z.abs() < cfg.r;
        conditioned &= fp.v.abs() < r_cond;
        sup4.push(m4);
        if next_ckpt < ckpts.len() && ckpts[next_ckpt] == k + 1 {
            out.ckpt_z.push(z);
            out.ckpt_v.push(fp.v);
            next_ckpt += 1;
        }
    }
    if conditioned {
        out.sup4 = Some(sup4);
    }
    Ok(out)
}

/// Compares survival of the step-`ε` chain with the fine-grid continuous
/// reference at shrunk and enlarged radii, corrected by the W2 and
/// oscillation terms. One-dimensional.
pub fn sandwich_check(params: &DecoupledParams, cfg: &SandwichConfig) -> Result<SandwichReport> {
    cfg.validate()?;
    if params.dim() != 1 {
        return Err(Error::pre("sandwich_check is one-dimensional"));
    }
    let c = params.coord(0);
    let bound = match fourth_moment_bound(&c, cfg.r, cfg.delta, cfg.step) {
        Ok(b) => Some(b),
        Err(Error::ContractionNonPositive { .. }) => None,
        Err(e) => return Err(e),
    };
    let k_total = cfg.n_intervals;
    let n_ck = cfg.checkpoints.min(k_total as usize);
    let mut ckpts: Vec<u64> =
        (1..=n_ck).map(|j| ((j as f64 * k_total as f64 / n_ck as f64).round() as u64).clamp(1, k_total)).collect();
    ckpts.dedup();

    let mut z_alive = 0usize;
    let mut inner_alive = 0usize;
    let mut outer_alive = 0usize;
    let mut osc_hits = 0u64;
    let mut conditioned = 0usize;
    let mut sup4_sum = vec![0.0; k_total as usize];
    let mut ck_z: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n_paths); ckpts.len()];
    let mut ck_v: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n_paths); ckpts.len()];
    for start in (0..cfg.n_paths).step_by(BLOCK) {
        let end = (start + BLOCK).min(cfg.n_paths);
        let outcomes: Vec<Result<PathOutcome>> =
            (start..end).into_par_iter().map(|p| run_path(params, cfg, &ckpts, p)).collect();
        let mut block_sum = vec![0.0; k_total as usize];
        for o in outcomes {
            let o = o?;
            z_alive += o.z_survives as usize;
            inner_alive += o.inner_survives as usize;
            outer_alive += o.outer_survives as usize;
            osc_hits += o.osc_hits;
            if let Some(s) = o.sup4 {
                conditioned += 1;
                block_sum.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
            }
            for (j, (zv, vv)) in o.ckpt_z.iter().zip(&o.ckpt_v).enumerate() {
                ck_z[j].push(*zv);
                ck_v[j].push(*vv);
            }
        }
        sup4_sum.iter_mut().zip(&block_sum).for_each(|(a, b)| *a += b);
    }

    let n = cfg.n_paths as f64;
    let p_discrete = z_alive as f64 / n;
    let p_cont_inner = inner_alive as f64 / n;
    let p_cont_outer = outer_alive as f64 / n;

    let mut w2_sq_max: f64 = 0.0;
    for (zs, vs) in ck_z.into_iter().zip(ck_v) {
        let w = w2_empirical_1d(&SampleSet::from_1d(zs)?, &SampleSet::from_1d(vs)?)?;
        w2_sq_max = w2_sq_max.max(w * w);
    }
    let e_hat = bound.map(|b| 0.75 * b.contraction * cfg.step * w2_sq_max);
    let kf = k_total as f64;
    let corr_w2 = kf * w2_sq_max / (cfg.delta * cfg.delta);

    let p_osc = osc_hits as f64 / (n * kf);
    let osc_constant = p_osc * cfg.delta_bar.powi(4);
    let corr_osc = 1.0 - (1.0 - osc_constant / cfg.delta_bar.powi(4)).powf(kf);

    let lower = p_cont_inner - corr_w2;
    let upper = p_cont_outer + corr_w2 + corr_osc;
    let var = |p: f64| p * (1.0 - p) / n;
    let slack_lower = 1.96 * (var(p_discrete) + var(p_cont_inner)).sqrt();
    let slack_upper = 1.96 * (var(p_discrete) + var(p_cont_outer)).sqrt();
    let holds = lower <= p_discrete + slack_lower && p_discrete <= upper + slack_upper;

    let fourth_moment_mc =
        (conditioned > 0).then(|| sup4_sum.iter().fold(0.0f64, |m, s| m.max(*s)) / conditioned as f64);
    let assumption = check_discretization_assumption(&Model::Decoupled(params.clone()), cfg.step);
    Ok(SandwichReport {
        config: cfg.clone(),
        p_discrete,
        p_cont_inner,
        p_cont_outer,
        w2_sq_max,
        e_hat,
        corr_w2,
        p_osc,
        osc_constant,
        corr_osc,
        lower,
        upper,
        slack_lower,
        slack_upper,
        holds,
        fourth_moment_bound: bound.map(|b| b.value),
        fourth_moment_mc,
        conditioned_paths: conditioned,
        fourth_moment_ok: bound.zip(fourth_moment_mc).map(|(b, m)| m <= b.value),
        assumption,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SandwichConfig {
        SandwichConfig {
            r: 1.0,
            step: 0.02,
            n_intervals: 100,
            delta: 0.2,
            delta_bar: 0.2,
            n_paths: 600,
            substeps: 16,
            x0: 0.0,
            seed: 4,
            checkpoints: 10,
        }
    }

    #[test]
    fn ordering_of_survival_probabilities() {
        let p = DecoupledParams::scalar(1.0, 1.0, 1.0, 0.3).unwrap();
        let rep = sandwich_check(&p, &cfg()).unwrap();
        assert!(rep.p_cont_inner <= rep.p_cont_outer);
        assert!(rep.p_cont_inner < 1.0 && rep.p_cont_outer > 0.0);
        assert!(rep.holds, "{rep:?}");
        assert!(rep.fourth_moment_ok.unwrap());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let p = DecoupledParams::scalar(1.0, 1.0, 1.0, 0.3).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| sandwich_check(&p, &cfg()).unwrap());
        let b = three.install(|| sandwich_check(&p, &cfg()).unwrap());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn runs_without_contraction() {
        let p = DecoupledParams::scalar(1.0, 1.0, 1.0, 2.0).unwrap();
        let rep = sandwich_check(&p, &SandwichConfig { n_paths: 50, n_intervals: 20, ..cfg() }).unwrap();
        assert_eq!(rep.fourth_moment_bound, None);
        assert!(!rep.assumption.satisfied);
    }

    #[test]
    fn rejects_bad_geometry() {
        let p = DecoupledParams::scalar(1.0, 1.0, 1.0, 0.3).unwrap();
        let bad = SandwichConfig { delta: 0.6, delta_bar: 0.5, ..cfg() };
        assert!(sandwich_check(&p, &bad).unwrap_err().is_validation());
    }
}
