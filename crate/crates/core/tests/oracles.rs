//! Cross-checks against statrs, which shares no code with this crate.
//! The stationary law `(1 + c x²)^κ` is a Student-t with `ν = -2κ - 1`
//! degrees of freedom at scale `1/√(cν)`.

use powerlaw_dynamics::model::DecoupledParams;
use powerlaw_dynamics::special;
use powerlaw_dynamics::stationary::{density, stationary_moment, Cdf, CoordLaw, Moment, PowerLaw};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
use statrs::statistics::Distribution;

fn student(law: &PowerLaw) -> StudentsT {
    StudentsT::new(0.0, law.scale(), law.nu()).unwrap()
}

#[test]
fn density_and_cdf_match_student_t() {
    for (h, s, r, eta) in [(1.0, 1.0, 1.0, 0.1), (1.0, 2.0, 1.0, 1.0), (0.5, 1.0, 3.0, 0.4), (2.0, 0.3, 0.7, 0.05)] {
        let p = DecoupledParams::scalar(h, s, r, eta).unwrap();
        let law = CoordLaw::new(&p, 0).unwrap();
        let CoordLaw::PowerLaw(pl) = law else { panic!("power law expected") };
        let t = student(&pl);
        let cdf = Cdf::new(law);
        for x in [-30.0, -3.0, -0.7, 0.0, 0.2, 1.5, 8.0] {
            let f = density(&p, 0, x).unwrap();
            assert!((f - t.pdf(x)).abs() <= 1e-10 * t.pdf(x).max(1e-300), "pdf {x}: {f} vs {}", t.pdf(x));
            assert!((cdf.eval(x) - t.cdf(x)).abs() < 1e-9, "cdf {x}: {} vs {}", cdf.eval(x), t.cdf(x));
        }
    }
}

#[test]
fn second_moment_matches_student_t_variance() {
    // κ = -(1 + h/(ηρ)); choose values on both sides of κ = -3/2
    for (h, eta) in [(1.0, 0.1), (1.0, 0.5), (1.0, 1.5), (1.0, 2.5)] {
        let p = DecoupledParams::scalar(h, 1.0, 1.0, eta).unwrap();
        let CoordLaw::PowerLaw(pl) = CoordLaw::new(&p, 0).unwrap() else { unreachable!() };
        let m = stationary_moment(&p, 0, 2).unwrap();
        if pl.nu() > 2.0 {
            let v = student(&pl).variance().unwrap();
            let Moment::Finite(got) = m else { panic!("finite variance expected for ν = {}", pl.nu()) };
            assert!((got - v).abs() < 1e-9 * v, "{got} vs {v}");
        } else {
            assert_eq!(m, Moment::Infinite);
        }
    }
}

#[test]
fn gamma_matches_statrs() {
    for x in [0.3, 0.5, 1.0, 2.5, 7.25, 20.0, 100.5] {
        let want = statrs::function::gamma::gamma(x);
        assert!((special::gamma(x) - want).abs() <= 1e-12 * want, "Γ({x})");
        let lw = statrs::function::gamma::ln_gamma(x);
        assert!((special::ln_gamma(x) - lw).abs() <= 1e-12 * lw.abs().max(1.0), "lnΓ({x})");
    }
}
