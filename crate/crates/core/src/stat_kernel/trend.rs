use serde::{Deserialize, Serialize};

use super::normal_sf;
use crate::error::{Error, Result};
use crate::tables::{chi_square_table_test, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendDirection {
    Decreasing,
    Increasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendResult {
    /// Pearson chi-square on the 2×t (DK, not DK) × timepoint table.
    pub homogeneity: TestResult,
    /// Positive when the data move in `direction`.
    pub trend_z: f64,
    pub trend_p_one_sided: f64,
    pub direction: TrendDirection,
}

/// Homogeneity and Cochran–Armitage trend test for the DK share over time.
///
/// `dk_counts[i] = (DK answers, all answers)` at timepoint `i + 1`; the trend
/// uses scores `1..=t`.
pub fn dk_trend_test(
    dk_counts: &[(u64, u64)],
    direction: TrendDirection,
    alpha: f64,
) -> Result<TrendResult> {
    if dk_counts.len() < 2 {
        return Err(Error::TooFewTimepoints {
            analysis: "trend",
            needed: 2,
            found: dk_counts.len(),
        });
    }
    if let Some((i, _)) = dk_counts.iter().enumerate().find(|(_, &(_, n))| n == 0) {
        return Err(Error::InvalidInput(format!(
            "timepoint {} has no answers",
            i + 1
        )));
    }
    if let Some(&(dk, n)) = dk_counts.iter().find(|&&(dk, n)| dk > n) {
        return Err(Error::InvalidInput(format!(
            "DK count {dk} exceeds total {n}"
        )));
    }
    let dk_total: u64 = dk_counts.iter().map(|c| c.0).sum();
    let n_total: u64 = dk_counts.iter().map(|c| c.1).sum();
    if dk_total == 0 || dk_total == n_total {
        return Err(Error::DegenerateMargin(
            "DK share is 0 or 1 at every timepoint; trend undefined".into(),
        ));
    }

    let table = vec![
        dk_counts.iter().map(|c| c.0).collect::<Vec<_>>(),
        dk_counts.iter().map(|c| c.1 - c.0).collect::<Vec<_>>(),
    ];
    let homogeneity = chi_square_table_test(&table, false, alpha)?;

    let pooled = dk_total as f64 / n_total as f64;
    let mut numer = 0.0;
    let mut sum_ns = 0.0;
    let mut sum_ns2 = 0.0;
    for (i, &(dk, n)) in dk_counts.iter().enumerate() {
        let score = (i + 1) as f64;
        let n = n as f64;
        numer += score * (dk as f64 - n * pooled);
        sum_ns += n * score;
        sum_ns2 += n * score * score;
    }
    let variance = pooled * (1.0 - pooled) * (sum_ns2 - sum_ns * sum_ns / n_total as f64);
    // Positive z_up means the DK share rises with time.
    let z_up = numer / variance.sqrt();
    let trend_z = match direction {
        TrendDirection::Increasing => z_up,
        TrendDirection::Decreasing => -z_up,
    };
    Ok(TrendResult {
        homogeneity,
        trend_z,
        trend_p_one_sided: normal_sf(trend_z),
        direction,
    })
}
