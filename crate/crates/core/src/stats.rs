// SPDX-License-Identifier: Apache-2.0
//! Standard-normal quantiles.

use statrs::distribution::{ContinuousCDF, Normal};

/// Inverse of the standard normal CDF; ±∞ at the endpoints, NaN outside [0, 1].
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    Normal::standard().inverse_cdf(p)
}

/// Two-sided critical value z_{1−α/2}.
pub fn two_sided_z(alpha: f64) -> f64 {
    // Φ⁻¹(1 − α/2) = −Φ⁻¹(α/2) avoids cancellation in 1 − α/2 for tiny α
    -normal_quantile(alpha / 2.0)
}
