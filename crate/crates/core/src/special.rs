//! Standard normal distribution functions.
//!
//! `norm_cdf` goes through the complementary error function so that the lower
//! tail keeps full relative precision (`Φ(-30)` is representable, not zero).

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// ln(2π)
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal CDF, Φ(x).
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density, φ(x).
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * LN_2PI
}

/// Inverse of the standard normal CDF for `p` in (0, 1).
pub fn norm_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // One Newton step against the accurate CDF.
    let d = norm_pdf(x);
    if d > 0.0 && x.is_finite() {
        x - (norm_cdf(x) - p) / d
    } else {
        x
    }
}

/// Numerically stable log(Σ exp(v_i)). Returns -inf for an empty or all -inf input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
