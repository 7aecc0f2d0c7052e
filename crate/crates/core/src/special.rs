//! Standard-normal helpers.

use std::f64::consts::FRAC_1_SQRT_2;

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `P(a < Z ≤ b)` for a standard normal, evaluated on whichever tail keeps
/// the subtraction well conditioned. Infinite bounds are allowed.
#[inline]
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a >= 0.0 {
        norm_sf(a) - norm_sf(b)
    } else if b <= 0.0 {
        norm_cdf(b) - norm_cdf(a)
    } else {
        1.0 - norm_cdf(a) - norm_sf(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_tails_and_symmetry() {
        assert_eq!(normal_interval(f64::NEG_INFINITY, f64::INFINITY), 1.0);
        assert!((normal_interval(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-15);
        let upper = normal_interval(10.0, 11.0);
        let lower = normal_interval(-11.0, -10.0);
        assert!(upper > 0.0 && (upper - lower).abs() < 1e-12 * upper);
        assert_eq!(normal_interval(1.0, 1.0), 0.0);
    }
}
