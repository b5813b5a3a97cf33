//! Gamma-family special functions used by the Kumaraswamy→Beta KL and its
//! backward rules. `ln_gamma` and `digamma` come from statrs; trigamma (the
//! digamma derivative, needed to differentiate through digamma) is not
//! exposed there, so it is implemented here.

pub use statrs::consts::EULER_MASCHERONI;

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn digamma(x: f64) -> f64 {
    statrs::function::gamma::digamma(x)
}

/// ψ₁(x) for x > 0 via recurrence up to x ≥ 10 and the asymptotic series.
pub fn trigamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "trigamma domain is x > 0, got {x}");
    let mut acc = 0.0;
    let mut x = x;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x²) + 1/(6x³) − 1/(30x⁵) + 1/(42x⁷) − 1/(30x⁹)
    let series = inv
        + 0.5 * inv2
        + inv2 * inv * (1.0 / 6.0 + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 - inv2 / 30.0)));
    acc + series
}

/// log B(a, b)
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigamma_known_values() {
        // ψ₁(1) = π²/6, ψ₁(1/2) = π²/2
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-11);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-11);
        // recurrence ψ₁(x+1) = ψ₁(x) − 1/x²
        for &x in &[0.3, 1.7, 4.2, 9.5] {
            assert!((trigamma(x + 1.0) - (trigamma(x) - 1.0 / (x * x))).abs() < 1e-11);
        }
    }

    #[test]
    fn trigamma_matches_digamma_finite_difference() {
        let h = 1e-6;
        for &x in &[0.4, 1.0, 2.5, 7.0, 20.0] {
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!(
                (trigamma(x) - fd).abs() < 1e-6 * trigamma(x).abs().max(1.0),
                "x = {x}"
            );
        }
    }

    #[test]
    fn ln_beta_symmetry() {
        assert!((ln_beta(2.0, 3.0) - ln_beta(3.0, 2.0)).abs() < 1e-14);
        // B(1,1) = 1
        assert!(ln_beta(1.0, 1.0).abs() < 1e-14);
    }
}
