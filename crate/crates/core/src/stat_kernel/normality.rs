//! Goodness-of-fit to a normal law with mean and variance estimated from
//! the sample, using Stephens' finite-sample modifications.

use serde::{Deserialize, Serialize};

use super::normal_cdf;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalityTest {
    AndersonDarling,
    CramerVonMises,
    LillieforsKs,
}

/// A p-value known only to lie in `[lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PBand {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub test_name: NormalityTest,
    /// Modified statistic (A*, W* or D*).
    pub statistic: f64,
    /// Exact approximation, or the band's lower bound when `censored` is set.
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub censored: Option<PBand>,
    pub reject_at_005: bool,
}

impl NormalityReport {
    fn exact(test_name: NormalityTest, statistic: f64, p: f64) -> Self {
        let p_value = p.clamp(0.0, 1.0);
        Self {
            test_name,
            statistic,
            p_value,
            censored: None,
            reject_at_005: p_value < 0.05,
        }
    }

    fn banded(test_name: NormalityTest, statistic: f64, band: PBand) -> Self {
        Self {
            test_name,
            statistic,
            p_value: band.lower,
            censored: Some(band),
            reject_at_005: band.lower < 0.05,
        }
    }
}

pub const MIN_SAMPLE: usize = 8;

/// Runs Anderson–Darling, Cramér–von Mises and Lilliefors-corrected
/// Kolmogorov–Smirnov on `sample`.
pub fn normality_suite(sample: &[f64]) -> Result<Vec<NormalityReport>> {
    let n = sample.len();
    if n < MIN_SAMPLE {
        return Err(Error::InvalidInput(format!(
            "normality tests need at least {MIN_SAMPLE} values, got {n}"
        )));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "sample contains non-finite values".into(),
        ));
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 1e-12 * mean.abs().max(1.0) {
        return Err(Error::DegenerateSample("sample has zero variance".into()));
    }

    let mut z: Vec<f64> = sample.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(|a, b| a.partial_cmp(b).expect("finite"));

    Ok(vec![
        anderson_darling(&z),
        cramer_von_mises(&z),
        lilliefors(&z),
    ])
}

fn anderson_darling(z: &[f64]) -> NormalityReport {
    let n = z.len();
    let nf = n as f64;
    let tiny = f64::MIN_POSITIVE;
    let s: f64 = (0..n)
        .map(|i| {
            let lower = normal_cdf(z[i]).max(tiny).ln();
            let upper = normal_cdf(-z[n - 1 - i]).max(tiny).ln();
            (2.0 * (i as f64) + 1.0) * (lower + upper)
        })
        .sum();
    let a2 = -nf - s / nf;
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a < 0.2 {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    } else if a < 0.34 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else if a < 0.6 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a < 10.0 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else {
        3.7e-24
    };
    NormalityReport::exact(NormalityTest::AndersonDarling, a, p)
}

fn cramer_von_mises(z: &[f64]) -> NormalityReport {
    let nf = z.len() as f64;
    let w2 = 1.0 / (12.0 * nf)
        + z.iter()
            .enumerate()
            .map(|(i, &zi)| (normal_cdf(zi) - (2.0 * i as f64 + 1.0) / (2.0 * nf)).powi(2))
            .sum::<f64>();
    let w = w2 * (1.0 + 0.5 / nf);
    let p = if w < 0.0275 {
        1.0 - (-13.953 + 775.5 * w - 12542.61 * w * w).exp()
    } else if w < 0.051 {
        1.0 - (-5.903 + 179.546 * w - 1515.29 * w * w).exp()
    } else if w < 0.092 {
        (0.886 - 31.62 * w + 10.897 * w * w).exp()
    } else if w < 1.1 {
        (1.111 - 34.242 * w + 12.832 * w * w).exp()
    } else {
        7.37e-10
    };
    NormalityReport::exact(NormalityTest::CramerVonMises, w, p)
}

/// Upper critical points of D* = D(√n − 0.01 + 0.85/√n) for the normal
/// family with estimated parameters.
const LILLIEFORS_CRITICAL: [(f64, f64); 4] =
    [(0.15, 0.775), (0.10, 0.819), (0.05, 0.895), (0.01, 1.035)];

fn lilliefors(z: &[f64]) -> NormalityReport {
    let nf = z.len() as f64;
    let d = z
        .iter()
        .enumerate()
        .map(|(i, &zi)| {
            let f = normal_cdf(zi);
            let plus = (i as f64 + 1.0) / nf - f;
            let minus = f - i as f64 / nf;
            plus.max(minus)
        })
        .fold(0.0, f64::max);
    let root = nf.sqrt();
    let d_star = d * (root - 0.01 + 0.85 / root);

    let mut band = PBand {
        lower: 0.15,
        upper: 1.0,
    };
    for (alpha, crit) in LILLIEFORS_CRITICAL {
        if d_star >= crit {
            band = PBand {
                lower: 0.0,
                upper: alpha,
            };
        }
    }
    // Tighten the lower edge to the next tabulated level.
    if band.upper < 1.0 {
        band.lower = LILLIEFORS_CRITICAL
            .iter()
            .map(|&(a, _)| a)
            .filter(|&a| a < band.upper)
            .fold(0.0, f64::max);
    }
    NormalityReport::banded(NormalityTest::LillieforsKs, d_star, band)
}
