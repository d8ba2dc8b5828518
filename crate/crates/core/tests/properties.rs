use powerlaw_dynamics::exit::{exit_time_ode_oracle, exit_time_quadrature, quasi_potential, Domain};
use powerlaw_dynamics::model::{ergodicity_check, DecoupledParams, Model};
use powerlaw_dynamics::simulate::{simulate_batch, simulate_discrete_chain, ChainOptions, SimConfig};
use powerlaw_dynamics::stationary::{density, stationary_moment, Moment};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = DecoupledParams> {
    (0.2f64..3.0, 0.2f64..3.0, 0.0f64..2.0, 0.02f64..0.5)
        .prop_map(|(h, s, r, e)| DecoupledParams::scalar(h, s, r, e).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quadrature_matches_ode(p in params(), a in -1.5f64..-0.2, b in 0.2f64..1.5, t in 0.05f64..0.95) {
        let d = Domain::Interval { a, b };
        let x0 = a + t * (b - a);
        let q = exit_time_quadrature(&p, &d, x0).unwrap().value;
        prop_assert!(q > 0.0);
        // deep wells leave the difference scheme with a roundoff floor
        prop_assume!(q < 1e5);
        // second-order scheme, so extrapolate two grids
        let o4 = exit_time_ode_oracle(&p, &d, x0, 4001).unwrap();
        let o8 = exit_time_ode_oracle(&p, &d, x0, 8001).unwrap();
        let o = (4.0 * o8 - o4) / 3.0;
        prop_assert!((q - o).abs() <= 1e-4 * q, "quad {} ode {}", q, o);
    }

    #[test]
    fn exit_time_grows_with_domain(p in params(), r in 0.2f64..1.0) {
        let small = exit_time_quadrature(&p, &Domain::Interval { a: -r, b: r }, 0.0).unwrap().value;
        let large = exit_time_quadrature(&p, &Domain::Interval { a: -2.0 * r, b: 2.0 * r }, 0.0).unwrap().value;
        prop_assert!(large > small);
    }

    #[test]
    fn density_is_even_and_decreasing(p in params(), x in 0.01f64..5.0) {
        let f = |x| density(&p, 0, x).unwrap();
        prop_assert_eq!(f(x), f(-x));
        prop_assert!(f(x) < f(0.0));
        // far tails of narrow wells underflow to zero
        prop_assert!(f(1.1 * x) < f(x) || f(x) == 0.0);
    }

    #[test]
    fn second_moment_finite_iff_variance_exists(p in params()) {
        let c = p.coord(0);
        let m = stationary_moment(&p, 0, 2).unwrap();
        match c.tail_index() {
            Some(k) => prop_assert_eq!(matches!(m, Moment::Finite(_)), k < -1.5),
            None => prop_assert!(matches!(m, Moment::Finite(_))),
        }
    }

    #[test]
    fn ergodicity_is_monotone_in_eta(p in params(), f in 0.1f64..1.0) {
        let hi = Model::Decoupled(p.clone());
        let lo = Model::Decoupled(p.with_eta(p.eta * f).unwrap());
        if ergodicity_check(&hi).pass {
            prop_assert!(ergodicity_check(&lo).pass);
        }
    }

    #[test]
    fn barrier_grows_with_radius(p in params(), r in 0.1f64..2.0) {
        prop_assume!(p.rho[0] > 0.0);
        let a = quasi_potential(&p, r).unwrap().barrier;
        let b = quasi_potential(&p, 2.0 * r).unwrap().barrier;
        prop_assert!(a > 0.0 && b > a);
    }
}

#[test]
fn chain_grid_matches_continuous_scheme() {
    let model = Model::Decoupled(DecoupledParams::new(vec![1.0, 0.5], vec![1.0, 2.0], vec![0.5, 1.0], 0.1).unwrap());
    let cfg = SimConfig { step: 0.02, horizon: 1.0, n_paths: 7, base_seed: 31, x0: vec![0.3, -0.2], record_stride: 1 };
    let em = simulate_batch(&model, &cfg).unwrap();
    let chain = simulate_discrete_chain(&model, &cfg, ChainOptions::default()).unwrap();
    let interp = simulate_discrete_chain(&model, &cfg, ChainOptions { interpolation_points: 5, ..Default::default() }).unwrap();
    assert_eq!(em.values, chain.values);
    // interpolation records carry grid indices; grid points are where time sits on the grid
    for p in 0..cfg.n_paths {
        let grid: Vec<f64> = (0..interp.n_records())
            .filter(|&t| (interp.times[t] / cfg.step - interp.steps[t] as f64).abs() < 1e-9)
            .flat_map(|t| interp.state(p, t).to_vec())
            .collect();
        assert_eq!(grid, em.path(p));
    }
}

#[test]
fn simulation_is_independent_of_thread_count() {
    let model = Model::Decoupled(DecoupledParams::scalar(1.0, 1.0, 1.0, 0.1).unwrap());
    let cfg = SimConfig { step: 0.01, horizon: 2.0, n_paths: 500, base_seed: 8, x0: vec![0.5], record_stride: 10 };
    let run = |n| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        pool.install(|| simulate_batch(&model, &cfg).unwrap().values)
    };
    assert_eq!(run(1), run(3));
}
