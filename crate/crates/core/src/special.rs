//! Gamma function.
//!
//! Lanczos approximation with g = 7 and the nine coefficients below
//! (the widely reproduced set from Godfrey), giving about 1e-15 relative
//! accuracy for positive real arguments. Negative arguments use the
//! reflection formula.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_sum(x: f64) -> f64 {
    // x is the shifted argument (original minus one).
    let mut a = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    a
}

pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        PI / ((PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let t = x + LANCZOS_G + 0.5;
        // split the power so t^(x+½) does not overflow ahead of e^-t
        let half = t.powf(0.5 * (x + 0.5));
        (2.0 * PI).sqrt() * half * (-t).exp() * half * lanczos_sum(x)
    }
}

/// `ln |Γ(x)|`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        (PI / (PI * x).sin()).abs().ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let t = x + LANCZOS_G + 0.5;
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + lanczos_sum(x).ln()
    }
}

/// `Γ(a) / Γ(b)`, computed in log space when either factor would overflow.
pub fn gamma_ratio(a: f64, b: f64) -> f64 {
    if a < 150.0 && b < 150.0 && a > 0.0 && b > 0.0 {
        gamma(a) / gamma(b)
    } else {
        (ln_gamma(a) - ln_gamma(b)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn integer_values() {
        let mut fact = 1.0f64;
        for n in 1..=20 {
            assert!(rel(gamma(n as f64), fact) < 1e-13, "n = {n}");
            fact *= n as f64;
        }
    }

    #[test]
    fn large_arguments() {
        for x in [149.7, 160.0, 171.0] {
            assert!(rel(gamma(x), ln_gamma(x).exp()) < 1e-11, "x = {x}");
        }
        assert!(rel(gamma_ratio(149.2, 149.7), (ln_gamma(149.2) - ln_gamma(149.7)).exp()) < 1e-11);
    }

    #[test]
    fn half_integer_values() {
        // Γ(n + 1/2) = (2n)! √π / (4^n n!)
        let sqrt_pi = PI.sqrt();
        assert!(rel(gamma(0.5), sqrt_pi) < 1e-14);
        assert!(rel(gamma(1.5), sqrt_pi / 2.0) < 1e-14);
        assert!(rel(gamma(2.5), 3.0 * sqrt_pi / 4.0) < 1e-14);
        assert!(rel(gamma(10.5), 1_133_278.388_948_785_6) < 1e-13);
        assert!(rel(gamma(-0.5), -2.0 * sqrt_pi) < 1e-13);
    }

    #[test]
    fn log_gamma_consistent() {
        for &x in &[0.3, 1.0, 2.5, 7.25, 33.0, 120.5] {
            assert!((ln_gamma(x) - gamma(x).ln()).abs() < 1e-12 * (1.0 + gamma(x).ln().abs()));
        }
        // ln Γ(201) = ln 200!
        let ln_fact: f64 = (1..=200).map(|k| (k as f64).ln()).sum();
        assert!(rel(ln_gamma(201.0), ln_fact) < 1e-14);
    }

    #[test]
    fn ratio_large_arguments() {
        // Γ(a + 1)/Γ(a) = a
        assert!(rel(gamma_ratio(301.0, 300.0), 300.0) < 1e-11);
        assert!(rel(gamma_ratio(5.5, 4.5), 4.5) < 1e-14);
    }
}
