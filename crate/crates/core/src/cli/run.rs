//! Experiment dispatch and artifact emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::config::{
    decoupled, locate, ExitOptions, ExperimentBlock, ExperimentConfig, Format, SandwichOptions,
    SgdOptions, SimulateOptions, StationaryOptions, SweepOptions,
};
use crate::error::{Error, Result};
use crate::exit::{
    asymptotic_sweep, exit_csv_row, exit_time_mc, exit_time_ode_oracle, exit_time_quadrature, ode_richardson, oscillation_sweep,
    resolve_max_steps, sandwich_check, ExitMcOptions, ExitMethod, ExitProblem, ExitTimeEstimate, OscillationConfig,
    SandwichConfig, SweepConfig, EXIT_CSV_HEADER,
};
use crate::metrics::contraction_fit;
use crate::model::{contraction_constants, ergodicity_check, Model};
use crate::simulate::{
    check_discretization_assumption, couple_paths, sgd_noise_experiment, simulate_batch, simulate_discrete_chain,
    ChainOptions, NoiseScaling, Scheme, SgdLabConfig,
};
use crate::stationary::{
    fp_residual, ks_statistic, normalizing_constant, sample_coordinate, stationary_moment, Cdf, CoordLaw,
    DensityTable, ZMethod,
};

/// Writes files into one directory, each through a temporary file and a
/// rename.
pub struct Artifacts {
    dir: PathBuf,
    csv: bool,
    json: bool,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: &Path, formats: &[Format]) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            csv: formats.contains(&Format::Csv),
            json: formats.contains(&Format::Json),
            written: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(contents.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)?;
        self.written.push(target);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, contents: &str) -> Result<()> {
        if self.csv {
            self.put(name, contents)?;
        }
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if self.json {
            self.put(name, &to_json(value)?)?;
        }
        Ok(())
    }

    /// Always written, whatever the format list says.
    pub fn resolved_config(&mut self, cfg: &ExperimentConfig) -> Result<()> {
        self.put("resolved_config.json", &to_json(cfg)?)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Fills defaulted fields so the echoed config reproduces the run.
pub fn resolve(mut cfg: ExperimentConfig) -> Result<(ExperimentConfig, Model)> {
    let model = cfg.build_model()?;
    let d = model.dim();
    if cfg.simulation.x0.is_none() {
        cfg.simulation.x0 = Some(vec![0.0; d]);
    }
    let exp = cfg.experiment.name();
    let x0 = cfg.x0(d);
    if x0.len() != d {
        return Err(Error::InvalidParams(format!("simulation.x0 must have length {d}")));
    }
    if cfg.simulation.record_stride == 0 {
        return Err(Error::InvalidParams("simulation.record_stride must be >= 1".into()));
    }
    let mut block = cfg.experiment.clone();
    match &mut block {
        ExperimentBlock::Stationary(o) => {
            let p = decoupled(&model)?;
            if o.coord >= d {
                return Err(Error::InvalidParams(format!("experiment.stationary.coord must be < {d}")));
            }
            if o.half_width.is_none() {
                let c = p.coord(o.coord);
                o.half_width = Some(10.0 * (c.eta * c.sigma / (2.0 * c.h)).sqrt());
            }
        }
        ExperimentBlock::Exit(o) => {
            if o.methods.is_none() {
                o.methods = Some(if d == 1 {
                    vec![ExitMethod::Mc, ExitMethod::Quadrature, ExitMethod::Ode]
                } else {
                    vec![ExitMethod::Mc]
                });
            }
            if o.methods.as_ref().unwrap().contains(&ExitMethod::Mc) && o.max_steps.is_none() {
                let problem = exit_problem(&cfg, &model, o)?;
                problem.validate().map_err(|e| locate(e, exp))?;
                o.max_steps = Some(resolve_max_steps(&problem).map_err(|e| locate(e, exp))?);
            }
        }
        _ => {}
    }
    cfg.experiment = block;
    Ok((cfg, model))
}

fn exit_problem(cfg: &ExperimentConfig, model: &Model, o: &ExitOptions) -> Result<ExitProblem> {
    Ok(ExitProblem {
        params: decoupled(model)?,
        domain: o.domain,
        x0: cfg.x0(model.dim()),
        step: cfg.step()?,
        max_steps: o.max_steps,
        n_paths: cfg.n_paths()?,
        seed: cfg.simulation.base_seed,
    })
}

/// Advisory lines for `validate`: ergodicity threshold and the
/// discretization assumption. Invariant failures are returned as errors.
pub fn advisories(cfg: &ExperimentConfig, model: &Model) -> Vec<String> {
    let mut lines = Vec::new();
    let erg = ergodicity_check(model);
    if erg.pass {
        lines.push(format!("valid; ergodicity threshold satisfied ({} < {})", model.eta(), erg.threshold));
    } else {
        lines.push(format!(
            "valid; warning: ergodicity threshold not satisfied ({} >= {})",
            model.eta(),
            erg.threshold
        ));
    }
    if let Some(step) = cfg.simulation.step {
        for w in check_discretization_assumption(model, step).warnings {
            lines.push(format!("warning: {w}"));
        }
    }
    if let (ExperimentBlock::Sandwich(_), Ok(p)) = (&cfg.experiment, decoupled(model)) {
        let c = 2.0 * p.h[0] - p.eta * p.rho[0];
        if c <= 0.0 {
            lines.push(format!("warning: 2h - ηρ = {c} <= 0, fourth-moment bound unavailable"));
        }
    }
    lines
}

/// Checks every invariant the run would check, without running.
pub fn check(cfg: &ExperimentConfig, model: &Model) -> Result<()> {
    let exp = cfg.experiment.name();
    let d = model.dim();
    let at = |e| locate(e, exp);
    match &cfg.experiment {
        ExperimentBlock::Simulate(o) => {
            cfg.sim_config(d)?;
            simulate_options(o)?;
        }
        ExperimentBlock::Stationary(o) => {
            let p = decoupled(model)?;
            CoordLaw::new(&p, o.coord)?;
            if !(o.half_width.unwrap_or(1.0) > 0.0) || o.n_points < 3 {
                return Err(at(Error::invalid("half_width must be > 0 and n_points >= 3")));
            }
            if let Some(k) = o.moment_orders.iter().find(|k| *k % 2 == 1) {
                return Err(at(Error::invalid(format!("moment_orders must be even, got {k}"))));
            }
            if o.n_samples == Some(0) {
                return Err(at(Error::invalid("n_samples must be >= 1")));
            }
        }
        ExperimentBlock::Exit(o) => {
            let methods = o.methods.clone().unwrap_or_default();
            if methods.is_empty() {
                return Err(at(Error::invalid("methods must not be empty")));
            }
            if d != 1 && methods.iter().any(|m| *m != ExitMethod::Mc) {
                return Err(at(Error::invalid("methods quadrature and ode need a one-dimensional model")));
            }
            if methods.contains(&ExitMethod::Mc) {
                let problem = exit_problem(cfg, model, o)?;
                problem.validate().map_err(at)?;
            }
            if d == 1 && o.domain.interval(1).is_none() {
                return Err(at(Error::invalid("domain must be one-dimensional")));
            }
            if o.n_grid < 5 {
                return Err(at(Error::invalid("n_grid must be >= 5")));
            }
            if o.richardson_grid < 5 {
                return Err(at(Error::invalid("richardson_grid must be >= 5")));
            }
        }
        ExperimentBlock::Couple(o) => {
            cfg.sim_config(d)?;
            if o.x0.len() != d || o.y0.len() != d {
                return Err(at(Error::invalid(format!("x0 and y0 must have length {d}"))));
            }
        }
        ExperimentBlock::Sandwich(o) => {
            if d != 1 {
                return Err(Error::pre("the sandwich experiment is one-dimensional"));
            }
            sandwich_config(cfg, o)?;
            if o.oscillation_steps.iter().any(|s| !(*s > 0.0 && *s <= o.oscillation_horizon)) {
                return Err(at(Error::invalid("oscillation_steps must lie in (0, oscillation_horizon]")));
            }
        }
        ExperimentBlock::Sweep(o) => {
            let p = decoupled(model)?;
            let step = cfg.step()?;
            let n_paths = cfg.n_paths()?;
            if !(step > 0.0) {
                return Err(Error::InvalidParams("simulation.step must be > 0".into()));
            }
            if n_paths == 0 {
                return Err(Error::InvalidParams("simulation.n_paths must be >= 1".into()));
            }
            if o.etas.is_empty() || o.etas.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(at(Error::invalid("etas must be a non-empty list of values > 0")));
            }
            if !(o.r > 0.0) || !(o.max_time > step) {
                return Err(at(Error::invalid("r must be > 0 and max_time > step")));
            }
            p.with_eta(o.etas[0])?;
        }
        ExperimentBlock::Sgdlab(o) => {
            sgd_config(cfg, o).validate().map_err(at)?;
        }
    }
    Ok(())
}

fn simulate_options(o: &SimulateOptions) -> Result<()> {
    let at = |m: &str| Err(Error::InvalidParams(format!("experiment.simulate.{m}")));
    match o.scheme {
        Scheme::ContinuousEm if o.noise_scaling != NoiseScaling::SqrtStep => {
            at("noise_scaling applies to discrete-chain and frozen-interpolation only")
        }
        Scheme::FrozenInterpolation if o.interpolation_points < 2 => {
            at("interpolation_points must be >= 2 for frozen-interpolation")
        }
        Scheme::ContinuousEm | Scheme::DiscreteChain if o.interpolation_points > 0 => {
            at("interpolation_points applies to frozen-interpolation only")
        }
        _ => Ok(()),
    }
}

fn sandwich_config(cfg: &ExperimentConfig, o: &SandwichOptions) -> Result<SandwichConfig> {
    let x0 = cfg.x0(1);
    let sc = SandwichConfig {
        r: o.r,
        step: cfg.step()?,
        n_intervals: o.n_intervals,
        delta: o.delta,
        delta_bar: o.delta_bar,
        n_paths: cfg.n_paths()?,
        substeps: o.substeps,
        x0: x0[0],
        seed: cfg.simulation.base_seed,
        checkpoints: o.checkpoints,
    };
    Ok(sc)
}

fn sgd_config(cfg: &ExperimentConfig, o: &SgdOptions) -> SgdLabConfig {
    SgdLabConfig {
        n_samples: o.n_samples,
        batch: o.batch,
        noise_std: o.noise_std,
        w_grid: o.w_grid.clone(),
        n_draws: o.n_draws,
        w_star: o.w_star,
        seed: cfg.simulation.base_seed,
    }
}

/// Runs a resolved, checked config and writes its artifacts.
pub fn execute(cfg: &ExperimentConfig, model: &Model, out: &mut Artifacts) -> Result<()> {
    let exp = cfg.experiment.name();
    let at = |e| locate(e, exp);
    let d = model.dim();
    out.resolved_config(cfg)?;
    match &cfg.experiment {
        ExperimentBlock::Simulate(o) => {
            let sim = cfg.sim_config(d)?;
            let batch = match o.scheme {
                Scheme::ContinuousEm => simulate_batch(model, &sim)?,
                Scheme::DiscreteChain | Scheme::FrozenInterpolation => simulate_discrete_chain(
                    model,
                    &sim,
                    ChainOptions { noise: o.noise_scaling, interpolation_points: o.interpolation_points },
                )?,
            };
            out.csv("trajectories.csv", &batch.to_csv())?;
            out.json("metadata.json", &batch.meta)?;
        }
        ExperimentBlock::Stationary(o) => run_stationary(cfg, model, o, out)?,
        ExperimentBlock::Exit(o) => run_exit(cfg, model, o, out)?,
        ExperimentBlock::Couple(o) => {
            let sim = cfg.sim_config(d)?;
            let batch = couple_paths(model, &sim, &o.x0, &o.y0)?;
            let mean = batch.mean_r();
            let consts = contraction_constants(model);
            let fit = contraction_fit(batch.times(), &mean)?;
            let r0 = mean[0];
            let bound_holds = consts.c_s.map(|c| {
                batch.times().iter().zip(&mean).all(|(t, r)| *r <= r0 * ((c + 0.1) * t).exp())
            });
            out.csv("coupling.csv", &batch.to_csv())?;
            out.json(
                "report.json",
                &json!({
                    "contraction_constants": consts,
                    "fit": fit,
                    "slope_within_c_s_plus_0_1": consts.c_s.map(|c| fit.slope <= c + 0.1),
                    "envelope_holds": bound_holds,
                }),
            )?;
        }
        ExperimentBlock::Sandwich(o) => {
            let p = decoupled(model)?;
            let sc = sandwich_config(cfg, o)?;
            let report = sandwich_check(&p, &sc).map_err(at)?;
            let oscillation = if o.oscillation_steps.is_empty() {
                None
            } else {
                let oc = OscillationConfig {
                    step: sc.step,
                    delta_bar: sc.delta_bar,
                    horizon: o.oscillation_horizon,
                    n_paths: sc.n_paths,
                    substeps: sc.substeps,
                    x0: sc.x0,
                    seed: sc.seed,
                };
                Some(oscillation_sweep(&p, &oc, &o.oscillation_steps).map_err(at)?)
            };
            out.json("sandwich.json", &json!({ "report": report, "oscillation": oscillation }))?;
        }
        ExperimentBlock::Sweep(o) => run_sweep(cfg, model, o, out)?,
        ExperimentBlock::Sgdlab(o) => {
            let report = sgd_noise_experiment(&sgd_config(cfg, o)).map_err(at)?;
            let mut csv = String::from("w,offset,variance,variance_se,exact_variance\n");
            for r in &report.rows {
                csv.push_str(&format!(
                    "{:e},{:e},{:e},{:e},{:e}\n",
                    r.w, r.offset, r.variance, r.variance_se, r.exact_variance
                ));
            }
            out.csv("sgd.csv", &csv)?;
            out.json("report.json", &report)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct MomentRow {
    order: u32,
    finite: bool,
    value: Option<f64>,
}

fn run_stationary(cfg: &ExperimentConfig, model: &Model, o: &StationaryOptions, out: &mut Artifacts) -> Result<()> {
    let p = decoupled(model)?;
    let i = o.coord;
    let law = CoordLaw::new(&p, i)?;
    let table = DensityTable::build(&p, i, o.half_width.expect("resolved"), o.n_points)?;
    let (z_closed, z_quad, kappa) = match law {
        CoordLaw::PowerLaw(pl) => (
            Some(normalizing_constant(&p, i, ZMethod::ClosedForm)?),
            Some(normalizing_constant(&p, i, ZMethod::Quadrature)?),
            Some(pl.kappa),
        ),
        CoordLaw::Gaussian { .. } => (None, None, None),
    };
    let moments = o
        .moment_orders
        .iter()
        .map(|&k| {
            let m = stationary_moment(&p, i, k)?;
            Ok(MomentRow { order: k, finite: m.value().is_some(), value: m.value() })
        })
        .collect::<Result<Vec<_>>>()?;
    let residual = fp_residual(&p, i, &table.grid, &table.pdf).ok();
    let ks = match o.n_samples {
        Some(n) => {
            let xs = sample_coordinate(&law, n, cfg.simulation.base_seed, i as u32);
            let cdf = Cdf::new(law);
            Some(json!({ "n": n, "statistic": ks_statistic(&xs, |x| cdf.eval(x))? }))
        }
        None => None,
    };
    out.csv("density.csv", &table.to_csv())?;
    out.json(
        "report.json",
        &json!({
            "coord": i,
            "law": law.kind(),
            "kappa": kappa,
            "c": p.rho[i] / p.sigma[i],
            "z_closed_form": z_closed,
            "z_quadrature": z_quad,
            "total_mass": table.total_mass(),
            "fp_residual": residual,
            "moments": moments,
            "ks": ks,
        }),
    )
}

fn run_exit(cfg: &ExperimentConfig, model: &Model, o: &ExitOptions, out: &mut Artifacts) -> Result<()> {
    let exp = cfg.experiment.name();
    let p = decoupled(model)?;
    let x0 = cfg.x0(model.dim());
    let methods = o.methods.clone().expect("resolved");
    let mut csv = String::from(EXIT_CSV_HEADER);
    csv.push('\n');
    let mut estimates: Vec<ExitTimeEstimate> = Vec::new();
    let mut mc_meta = None;
    let mut richardson = None;
    let mut panels = None;
    for m in &methods {
        let (est, eps) = match m {
            ExitMethod::Mc => {
                let problem = exit_problem(cfg, model, o)?;
                let opts = ExitMcOptions {
                    crossing: o.crossing,
                    noise: o.noise_scaling,
                    abort_if_censored_over: o.abort_if_censored_over,
                };
                let res = exit_time_mc(&problem, &opts).map_err(|e| locate(e, exp))?;
                mc_meta = Some(json!({
                    "max_steps": res.max_steps,
                    "aborted": res.aborted,
                    "paths_run": res.paths.len(),
                    "assumption": check_discretization_assumption(model, problem.step),
                }));
                (res.estimate, Some(problem.step))
            }
            ExitMethod::Quadrature => {
                let q = exit_time_quadrature(&p, &o.domain, x0[0]).map_err(|e| locate(e, exp))?;
                panels = Some(q.panels);
                (ExitTimeEstimate::exact(q.value, ExitMethod::Quadrature), None)
            }
            ExitMethod::Ode => {
                let g = exit_time_ode_oracle(&p, &o.domain, x0[0], o.n_grid).map_err(|e| locate(e, exp))?;
                richardson =
                    Some(ode_richardson(&p, &o.domain, x0[0], o.richardson_grid).map_err(|e| locate(e, exp))?);
                (ExitTimeEstimate::exact(g, ExitMethod::Ode), None)
            }
        };
        csv.push_str(&exit_csv_row(&est, p.eta, eps, &o.domain));
        csv.push('\n');
        estimates.push(est);
    }
    out.csv("exit.csv", &csv)?;
    out.json(
        "report.json",
        &json!({
            "domain": o.domain,
            "x0": x0,
            "estimates": estimates,
            "monte_carlo": mc_meta,
            "quadrature_panels": panels,
            "richardson": richardson,
        }),
    )
}

fn run_sweep(cfg: &ExperimentConfig, model: &Model, o: &SweepOptions, out: &mut Artifacts) -> Result<()> {
    let p = decoupled(model)?;
    let sc = SweepConfig {
        etas: o.etas.clone(),
        r: o.r,
        n_paths: cfg.n_paths()?,
        step: cfg.step()?,
        max_time: o.max_time,
        seed: cfg.simulation.base_seed,
        crossing: o.crossing,
        abort_if_censored_over: o.abort_if_censored_over,
    };
    let report = asymptotic_sweep(&p, &sc).map_err(|e| locate(e, "sweep"))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    let mut csv = String::from("eta,mean,ci_low,ci_high,n_exited,n_censored,eta_log_mean,eta_log_quadrature,usable\n");
    for r in &report.rows {
        csv.push_str(&format!(
            "{:e},{},{},{},{},{},{},{},{}\n",
            r.eta,
            opt(r.mean),
            opt(r.ci_low),
            opt(r.ci_high),
            r.n_exited,
            r.n_censored,
            opt(r.eta_log_mean),
            opt(r.eta_log_quadrature),
            r.usable
        ));
    }
    out.csv("sweep.csv", &csv)?;
    out.json("report.json", &report)
}
