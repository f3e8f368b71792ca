//! Scalar math helpers.
//!
//! All transcendental functions route through `libm` so results are
//! bit-identical across platforms and libc versions. `sqrt` is IEEE-exact
//! everywhere and uses the intrinsic.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn log1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

/// log(1 + exp(-m)) without overflow for large |m|.
#[inline]
pub fn softplus_neg(m: f64) -> f64 {
    if m >= 0.0 {
        log1p(exp(-m))
    } else {
        -m + log1p(exp(m))
    }
}

#[inline]
pub fn is_positive_finite(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

/// Logistic sigmoid, stable in both tails.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &m in &[-30.0, -5.0, -0.5, 0.0, 0.5, 5.0, 30.0] {
            let naive = (1.0_f64 + (-m as f64).exp()).ln();
            let stable = softplus_neg(m);
            assert!((naive - stable).abs() <= 1e-12 * naive.max(1.0));
        }
    }

    #[test]
    fn softplus_no_overflow() {
        assert!(softplus_neg(1e4).is_finite());
        assert!(softplus_neg(-1e4).is_finite());
        assert!((softplus_neg(-1e4) - 1e4).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_tails() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(800.0) > 0.999);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-8);
    }
}
