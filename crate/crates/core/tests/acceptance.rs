//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Sizes are the ones the criteria name; the determinism
//! check reruns reduced copies of every experiment.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use powerlaw_dynamics::cli::run_cli;
use powerlaw_dynamics::exit::{
    asymptotic_sweep, exit_time_mc, exit_time_ode_oracle, exit_time_quadrature, ode_richardson, oscillation_sweep,
    sandwich_check, terminal_w2_squared, Crossing, Domain, ExitMcOptions, ExitProblem, OscillationConfig,
    SandwichConfig, SweepConfig,
};
use powerlaw_dynamics::metrics::{contraction_fit, linear_fit};
use powerlaw_dynamics::model::{contraction_constants, DecoupledParams, Model};
use powerlaw_dynamics::rng::{Lane, Stream};
use powerlaw_dynamics::simulate::sgd::QuadraticFit;
use powerlaw_dynamics::simulate::{couple_paths, sgd_noise_experiment, simulate_batch, SgdLabConfig, SimConfig};
use powerlaw_dynamics::stationary::{
    density, fp_residual, ks_statistic, normalizing_constant, sample_coordinate, Cdf, CoordLaw, PowerLaw, ZMethod,
};
use serde_json::json;

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scalar(h: f64, sigma: f64, rho: f64, eta: f64) -> DecoupledParams {
    DecoupledParams::scalar(h, sigma, rho, eta).unwrap()
}

fn stationary_ks() -> Outcome {
    let p = scalar(1.0, 1.0, 1.0, 0.1);
    let cfg = SimConfig { step: 1e-3, horizon: 2000.0, n_paths: 32, base_seed: 101, x0: vec![0.0], record_stride: 100 };
    let batch = simulate_batch(&Model::Decoupled(p.clone()), &cfg).unwrap();
    let m = batch.n_records();
    let burn = m / 2;
    let mut samples = Vec::new();
    for path in 0..batch.n_paths() {
        for t in burn + 1..m {
            samples.push(batch.state(path, t)[0]);
        }
    }
    let cdf = Cdf::new(CoordLaw::new(&p, 0).unwrap());
    let ks = ks_statistic(&samples, |x| cdf.eval(x)).unwrap();
    outcome(ks < 0.02 && samples.len() >= 100_000, format!("KS {ks:.4} over {} samples", samples.len()))
}

fn normalization() -> Outcome {
    let mut worst = 0.0f64;
    for kappa in [-1.2, -2.0, -5.0, -11.0] {
        let law = PowerLaw::new(kappa, 1.0).unwrap();
        worst = worst.max((law.z_quadrature().unwrap() - law.z).abs() / law.z);
    }
    let cauchy = PowerLaw::new(-1.0, 1.0).unwrap();
    let k2 = PowerLaw::new(-2.0, 1.0).unwrap();
    let e1 = (cauchy.z_quadrature().unwrap() - PI).abs().max((cauchy.z - PI).abs());
    let e2 = (k2.z_quadrature().unwrap() - PI / 2.0).abs().max((k2.z - PI / 2.0).abs());
    // through the parameter interface as well: κ = -2 at η = h = ρ = σ = 1
    let via_params = normalizing_constant(&scalar(1.0, 1.0, 1.0, 1.0), 0, ZMethod::Quadrature).unwrap();
    let e3 = (via_params - PI / 2.0).abs();
    outcome(
        worst < 1e-8 && e1 < 1e-10 && e2 < 1e-10 && e3 < 1e-10,
        format!("max rel quad/closed {worst:.1e}; |Z-π| {e1:.1e}; |Z-π/2| {:.1e}", e2.max(e3)),
    )
}

fn fokker_planck() -> Outcome {
    let p = scalar(1.0, 1.0, 1.0, 0.1);
    let n = 2001;
    let grid: Vec<f64> = (0..n).map(|k| -5.0 + 10.0 * k as f64 / (n - 1) as f64).collect();
    let exact: Vec<f64> = grid.iter().map(|&x| density(&p, 0, x).unwrap()).collect();
    let normal: Vec<f64> = grid.iter().map(|&x| (-0.5 * x * x).exp() / (2.0 * PI).sqrt()).collect();
    let good = fp_residual(&p, 0, &grid, &exact).unwrap();
    let bad = fp_residual(&p, 0, &grid, &normal).unwrap();
    outcome(good < 1e-6 && bad > 1e-2, format!("residual {good:.2e}, standard normal {bad:.2e}"))
}

fn fluctuation_dissipation() -> Outcome {
    let mut s = Stream::new(404, 0, Lane::Aux);
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let h = 10f64.powf(-1.0 + 2.0 * s.uniform(4 * k));
        let sigma = 10f64.powf(-1.0 + 2.0 * s.uniform(4 * k + 1));
        let rho = 10f64.powf(-2.0 + 3.0 * s.uniform(4 * k + 2));
        let eta = 10f64.powf(-3.0 + 3.0 * s.uniform(4 * k + 3));
        let p = scalar(h, sigma, rho, eta).coord(0);
        let kappa = p.tail_index().unwrap();
        worst = worst.max((eta * rho * (1.0 + kappa) + h).abs() / h);
    }
    outcome(worst < 1e-12, format!("max relative defect {worst:.1e}"))
}

fn relative_changes(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| (w[1] - w[0]).abs() / w[0].abs()).collect()
}

fn moment_explosion() -> Outcome {
    let p = scalar(1.0, 1.0, 1.0, 1.0);
    let law = CoordLaw::new(&p, 0).unwrap();
    let base = 1usize << 20;
    let all = sample_coordinate(&law, base << 4, 55, 0);
    let (mut m2, mut m4) = (Vec::new(), Vec::new());
    for k in 0..5 {
        let s = &all[..base << k];
        m2.push(s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64);
        m4.push(s.iter().map(|x| x.powi(4)).sum::<f64>() / s.len() as f64);
    }
    let c2 = relative_changes(&m2);
    let c4 = relative_changes(&m4);
    let second_stable = c2.iter().all(|&c| c < 0.05);
    let fourth_stable = c4.iter().all(|&c| c < 0.05);
    let fmt = |v: &[f64]| v.iter().map(|c| format!("{:.1}%", 100.0 * c)).collect::<Vec<_>>().join(" ");
    outcome(
        second_stable && !fourth_stable,
        format!("m2 changes {} (exact 1); m4 changes {}", fmt(&c2), fmt(&c4)),
    )
}

fn contraction() -> Outcome {
    let p = scalar(1.0, 1.0, 1.0, 0.1);
    let model = Model::Decoupled(p);
    let c_s = contraction_constants(&model).c_s.unwrap();
    let cfg = SimConfig { step: 1e-3, horizon: 3.0, n_paths: 10_000, base_seed: 6, x0: vec![1.0], record_stride: 50 };
    let coupled = couple_paths(&model, &cfg, &[1.0], &[-1.0]).unwrap();
    let mean = coupled.mean_r();
    let fit = contraction_fit(coupled.times(), &mean).unwrap();
    let rate = c_s + 0.1;
    let envelope = coupled.times().iter().zip(&mean).all(|(t, r)| *r <= mean[0] * (rate * t).exp() * (1.0 + 1e-12));
    outcome(
        fit.slope <= rate && envelope,
        format!("slope {:.3} vs bound {rate:.2}; envelope {}", fit.slope, if envelope { "holds" } else { "violated" }),
    )
}

fn exit_agreement() -> Outcome {
    let p = scalar(1.0, 1.0, 1.0, 0.1);
    let d = Domain::Interval { a: -1.0, b: 1.0 };
    let quad = exit_time_quadrature(&p, &d, 0.0).unwrap().value;
    let ode = exit_time_ode_oracle(&p, &d, 0.0, 20001).unwrap();
    let rich = ode_richardson(&p, &d, 0.0, 2001).unwrap();
    let problem = ExitProblem { params: p, domain: d, x0: vec![0.0], step: 0.01, max_steps: None, n_paths: 2000, seed: 1 };
    let opts = ExitMcOptions { crossing: Crossing::BrownianBridge, ..Default::default() };
    let mc = exit_time_mc(&problem, &opts).unwrap().estimate;
    let tol = (2.0 * mc.half_width()).max(0.05 * quad);
    let rel = (quad - ode).abs() / quad;
    let pass = (mc.mean - quad).abs() <= tol && rel < 1e-6 && (3.2..=4.8).contains(&rich.ratio);
    outcome(
        pass,
        format!(
            "MC {:.1} [{:.1}, {:.1}], quadrature {quad:.4}, ODE rel {rel:.1e}, Richardson ratio {:.4}",
            mc.mean, mc.ci_low, mc.ci_high, rich.ratio
        ),
    )
}

fn asymptotic_order() -> Outcome {
    let p = scalar(1.0, 1.0, 1.0, 0.1);
    let sweep = |r| {
        let cfg = SweepConfig {
            etas: vec![0.4, 0.2, 0.1],
            r,
            n_paths: 500,
            step: 5e-3,
            max_time: 5000.0,
            seed: 3,
            crossing: Crossing::BrownianBridge,
            abort_if_censored_over: Some(0.5),
        };
        asymptotic_sweep(&p, &cfg).unwrap()
    };
    let one = sweep(1.0);
    let two = sweep(2.0);
    let (Some(b1), Some(b2)) = (one.fitted_barrier, two.fitted_barrier) else {
        return outcome(false, "no fitted barrier".into());
    };
    let change = one.relative_change.unwrap_or(f64::INFINITY);
    outcome(
        one.stabilized == Some(true) && change < 0.3 && b2 > b1,
        format!("r=1 spread {:.1}%, barrier {b1:.3} -> {b2:.3} at r=2", 100.0 * change),
    )
}

fn sandwich() -> Outcome {
    let p = scalar(1.0, 1.0, 1.0, 0.01);
    let cfg = SandwichConfig {
        r: 1.0,
        step: 0.01,
        n_intervals: 1000,
        delta: 0.2,
        delta_bar: 0.2,
        n_paths: 10_000,
        substeps: 64,
        x0: 0.0,
        seed: 5,
        checkpoints: 10,
    };
    let rep = sandwich_check(&p, &cfg).unwrap();
    let osc = OscillationConfig { step: 0.01, delta_bar: 0.2, horizon: 1.0, n_paths: 10_000, substeps: 64, x0: 0.0, seed: 6 };
    let sweep = oscillation_sweep(&p, &osc, &[0.04, 0.02, 0.01, 0.005]).unwrap();
    let slope_ok = sweep.slope.is_some_and(|s| (0.6..=1.4).contains(&s));
    let moment_ok = match (rep.fourth_moment_bound, rep.fourth_moment_mc) {
        (Some(d), Some(mc)) => d >= mc,
        _ => false,
    };
    let exceed: Vec<u64> = sweep.rows.iter().map(|r| r.exceedances).collect();
    outcome(
        rep.holds && slope_ok && moment_ok,
        format!(
            "holds {}; oscillation slope {} (exceedances {exceed:?}); D {:.4} vs MC {:.2e}",
            rep.holds,
            sweep.slope.map_or("undefined".to_string(), |s| format!("{s:.2}")),
            rep.fourth_moment_bound.unwrap_or(f64::NAN),
            rep.fourth_moment_mc.unwrap_or(f64::NAN),
        ),
    )
}

fn terminal_w2_scaling() -> Outcome {
    let model = Model::Decoupled(scalar(1.0, 1.0, 1.0, 0.1));
    let steps = [0.1, 0.05, 0.025, 0.0125];
    let w2: Vec<f64> = steps
        .iter()
        .map(|&step| {
            let cfg = SimConfig { step, horizon: 1.0, n_paths: 20_000, base_seed: 7, x0: vec![0.0], record_stride: 1 };
            terminal_w2_squared(&model, &cfg, 64).unwrap()
        })
        .collect();
    let x: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
    let y: Vec<f64> = w2.iter().map(|v| v.ln()).collect();
    let (_, slope, _) = linear_fit(&x, &y);
    let vals = w2.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(" ");
    outcome((0.5..=1.5).contains(&slope), format!("W2^2 {vals}; log-log slope {slope:.2}"))
}

fn sgd_covariance() -> Outcome {
    let cfg = SgdLabConfig {
        n_samples: 10_000,
        batch: 16,
        noise_std: 0.5,
        w_grid: (0..9).map(|k| 1.0 + (k as f64 - 4.0) * 0.25).collect(),
        n_draws: 2000,
        w_star: 1.0,
        seed: 12,
    };
    let rep = sgd_noise_experiment(&cfg).unwrap();
    let r2 = match rep.fit {
        QuadraticFit::Fitted { r_squared, .. } => r_squared,
        QuadraticFit::Skipped { .. } => f64::NAN,
    };
    let full = sgd_noise_experiment(&SgdLabConfig { batch: 10_000, ..cfg }).unwrap();
    let zero = full.rows.iter().all(|r| r.variance == 0.0);
    outcome(r2 >= 0.95 && zero, format!("quadratic fit R² {r2:.4}; full batch variance zero: {zero}"))
}

fn base_config(experiment: serde_json::Value, simulation: serde_json::Value) -> serde_json::Value {
    json!({
        "schema_version": 1,
        "model": {"kind": "decoupled", "eta": 0.1, "h": [1.0], "sigma": [1.0], "rho": [1.0]},
        "simulation": simulation,
        "experiment": experiment,
    })
}

fn reduced_configs() -> Vec<(&'static str, serde_json::Value)> {
    vec![
        (
            "simulate",
            base_config(
                json!({"simulate": {"scheme": "frozen-interpolation", "interpolation_points": 4}}),
                json!({"step": 0.01, "horizon": 1.0, "n_paths": 300, "base_seed": 1}),
            ),
        ),
        ("stationary", base_config(json!({"stationary": {"n_samples": 5000}}), json!({"base_seed": 2}))),
        (
            "exit",
            base_config(
                json!({"exit": {"domain": {"kind": "interval", "a": -0.5, "b": 0.5}, "crossing": "brownian_bridge", "n_grid": 2001}}),
                json!({"step": 0.01, "n_paths": 300, "base_seed": 3}),
            ),
        ),
        (
            "couple",
            base_config(
                json!({"couple": {"x0": [1.0], "y0": [-1.0]}}),
                json!({"step": 0.01, "horizon": 2.0, "n_paths": 300, "base_seed": 4, "record_stride": 10}),
            ),
        ),
        (
            "sandwich",
            base_config(
                json!({"sandwich": {"r": 1.0, "n_intervals": 100, "delta": 0.2, "delta_bar": 0.2, "substeps": 8, "oscillation_steps": [0.04, 0.02]}}),
                json!({"step": 0.01, "n_paths": 300, "base_seed": 5}),
            ),
        ),
        (
            "sweep",
            base_config(
                json!({"sweep": {"etas": [0.5, 0.3], "r": 0.5, "max_time": 200.0}}),
                json!({"step": 0.01, "n_paths": 100, "base_seed": 6}),
            ),
        ),
        (
            "sgdlab",
            base_config(json!({"sgdlab": {"n_samples": 500, "batch": 16, "noise_std": 0.5, "n_draws": 200}}), json!({"base_seed": 7})),
        ),
    ]
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn run_in_pool(threads: usize, config: &Path, out: &Path) -> BTreeMap<String, Vec<u8>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let args = ["powerlaw", "run", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let code = pool.install(|| run_cli(args, &mut o, &mut e));
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&e));
    let files = read_dir(out);
    std::fs::remove_dir_all(out).unwrap();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    let mut n_files = 0;
    for (name, cfg) in reduced_configs() {
        let path = tmp.path().join(format!("{name}.json"));
        std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
        let out = tmp.path().join(name);
        let a = run_in_pool(1, &path, &out);
        let b = run_in_pool(4, &path, &out);
        let c = run_in_pool(4, &path, &out);
        n_files += a.len();
        if a != b || b != c {
            differing.push(name);
        }
    }
    outcome(
        differing.is_empty(),
        format!("{n_files} artifacts over 7 experiments, 1 vs 4 threads; differing: {differing:?}"),
    )
}

fn main() {
    let criteria: [(&str, Check); 12] = [
        ("stationary law KS", stationary_ks),
        ("normalizing constant", normalization),
        ("Fokker-Planck residual", fokker_planck),
        ("fluctuation-dissipation identity", fluctuation_dissipation),
        ("moment explosion", moment_explosion),
        ("synchronous-coupling contraction", contraction),
        ("exit time three-way agreement", exit_agreement),
        ("asymptotic exit order", asymptotic_order),
        ("discretization sandwich", sandwich),
        ("terminal W2 scaling", terminal_w2_scaling),
        ("SGD gradient-noise variance", sgd_covariance),
        ("determinism", determinism),
    ];
    let filter: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status}  {name}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
