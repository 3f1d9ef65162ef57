//! Distribution functions and the generic tests the analyses share.
//!
//! The special functions are backed by `statrs`; everything downstream only
//! sees [`chi_square_sf`], [`normal_cdf`] and [`normal_quantile`].

mod normality;
mod trend;

pub use normality::{normality_suite, NormalityReport, NormalityTest, PBand};
pub use trend::{dk_trend_test, TrendDirection, TrendResult};

use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// Upper-tail probability of the chi-square distribution with `df` degrees
/// of freedom, `Q(df/2, x/2)`.
///
/// Negative or NaN `x` is treated as 0 (the statistics fed here are sums of
/// squares, so only rounding can push them below zero).
pub fn chi_square_sf(x: f64, df: u32) -> f64 {
    assert!(df > 0, "chi-square needs at least one degree of freedom");
    if x.is_nan() || x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(f64::from(df) / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail, `1 - Φ(z)` without cancellation.
pub fn normal_sf(z: f64) -> f64 {
    normal_cdf(-z)
}

/// Inverse of the standard normal CDF on the open interval (0, 1).
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InfiniteQuantile(q));
    }
    let mut z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * q);
    // One Halley step against our own CDF keeps the pair exact inverses.
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if density > 0.0 {
        let err = normal_cdf(z) - q;
        let u = err / density;
        z -= u / (1.0 + 0.5 * z * u);
    }
    Ok(z)
}
