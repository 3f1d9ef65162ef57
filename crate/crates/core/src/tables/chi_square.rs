use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stat_kernel::chi_square_sf;

/// Outcome of a chi-square-type test at a fixed significance level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub alpha: f64,
    pub rejected: bool,
    /// Smallest expected cell count, for tests built on a contingency table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_expected: Option<f64>,
}

impl TestResult {
    pub fn new(statistic: f64, df: u32, p_value: f64, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            statistic,
            df,
            p_value,
            alpha,
            rejected: p_value < alpha,
            min_expected: None,
        }
    }

    /// Upper-tail chi-square test of `statistic`.
    pub fn chi_square(statistic: f64, df: u32, alpha: f64) -> Self {
        Self::new(statistic, df, chi_square_sf(statistic, df), alpha)
    }

    pub fn has_small_expected(&self) -> bool {
        self.min_expected.is_some_and(|m| m < 5.0)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Pearson chi-square test of independence (equivalently, homogeneity of
/// rows) on an r×c table of counts.
///
/// With `drop_dk_column` the last column is removed first; in every table of
/// this crate the guess columns are ordered T, P, DK.
pub fn chi_square_table_test(
    counts: &[Vec<u64>],
    drop_dk_column: bool,
    alpha: f64,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    let width = counts.first().map_or(0, Vec::len);
    if counts.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidInput("rows of unequal length".into()));
    }
    let cols = if drop_dk_column {
        width.saturating_sub(1)
    } else {
        width
    };
    let rows = counts.len();
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidInput(format!(
            "chi-square test needs at least a 2x2 table, got {rows}x{cols}"
        )));
    }

    let row_totals: Vec<f64> = counts
        .iter()
        .map(|r| r[..cols].iter().sum::<u64>() as f64)
        .collect();
    let col_totals: Vec<f64> = (0..cols)
        .map(|j| counts.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    if let Some(i) = row_totals.iter().position(|&t| t == 0.0) {
        return Err(Error::DegenerateMargin(format!("row {} is empty", i + 1)));
    }
    if let Some(j) = col_totals.iter().position(|&t| t == 0.0) {
        return Err(Error::DegenerateMargin(format!(
            "column {} is empty",
            j + 1
        )));
    }
    let total: f64 = row_totals.iter().sum();

    let mut statistic = 0.0;
    let mut min_expected = f64::INFINITY;
    for (row, &rt) in counts.iter().zip(&row_totals) {
        for (&observed, &ct) in row[..cols].iter().zip(&col_totals) {
            let expected = rt * ct / total;
            min_expected = min_expected.min(expected);
            let diff = observed as f64 - expected;
            statistic += diff * diff / expected;
        }
    }
    let df = ((rows - 1) * (cols - 1)) as u32;
    let mut result = TestResult::chi_square(statistic, df, alpha);
    result.min_expected = Some(min_expected);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_visit_rows() -> Vec<Vec<u64>> {
        vec![
            vec![5, 5, 2, 5, 5, 2, 8, 9, 9],
            vec![5, 4, 3, 7, 4, 2, 5, 5, 15],
        ]
    }

    #[test]
    fn two_visit_row_homogeneity() {
        let r = chi_square_table_test(&two_visit_rows(), false, 0.05).unwrap();
        assert!((r.statistic - 4.09).abs() < 0.005);
        assert_eq!(r.df, 8);
        assert!((r.p_value - 0.85).abs() < 0.005);
        assert!(!r.rejected);
        assert!(r.has_small_expected());
    }

    #[test]
    fn identical_rows() {
        let r = chi_square_table_test(&[vec![3, 4, 5], vec![3, 4, 5]], false, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn proportional_rows() {
        let r = chi_square_table_test(&[vec![10, 10, 10], vec![20, 20, 20]], false, 0.05).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert_eq!(r.df, 2);
    }

    #[test]
    fn drop_dk_column() {
        let r = chi_square_table_test(&[vec![10, 0, 7], vec![0, 10, 9]], true, 0.05).unwrap();
        assert_eq!(r.df, 1);
        assert!((r.statistic - 20.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_margin() {
        let err = chi_square_table_test(&[vec![1, 0, 2], vec![3, 0, 4]], false, 0.05);
        assert!(matches!(err, Err(Error::DegenerateMargin(_))));
        let err = chi_square_table_test(&[vec![0, 0, 0], vec![3, 1, 4]], false, 0.05);
        assert!(matches!(err, Err(Error::DegenerateMargin(_))));
        // Dropping DK leaves a row with only DK answers empty.
        let err = chi_square_table_test(&[vec![0, 0, 5], vec![3, 1, 4]], true, 0.05);
        assert!(matches!(err, Err(Error::DegenerateMargin(_))));
    }

    #[test]
    fn bad_alpha() {
        assert!(chi_square_table_test(&two_visit_rows(), false, 1.0).is_err());
    }

    fn table_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
        (2usize..5, 2usize..6)
            .prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(1u64..60, c), r))
    }

    proptest! {
        #[test]
        fn permutation_invariance(table in table_strategy(), seed in any::<u64>()) {
            let base = chi_square_table_test(&table, false, 0.05).unwrap();
            let mut rows = table.clone();
            rows.reverse();
            let rotate = (seed as usize) % rows[0].len();
            for r in rows.iter_mut() {
                r.rotate_left(rotate);
            }
            let permuted = chi_square_table_test(&rows, false, 0.05).unwrap();
            prop_assert!((base.statistic - permuted.statistic).abs() <= 1e-9 * (1.0 + base.statistic));
            prop_assert_eq!(base.df, permuted.df);
        }

        #[test]
        fn zero_iff_proportional(base in prop::collection::vec(1u64..40, 2..7),
                                 factors in prop::collection::vec(1u64..6, 2..5)) {
            let rows: Vec<Vec<u64>> = factors.iter().map(|&k| base.iter().map(|&x| x * k).collect()).collect();
            let r = chi_square_table_test(&rows, false, 0.05).unwrap();
            prop_assert!(r.statistic.abs() < 1e-9);
            // Perturbing a single cell breaks proportionality.
            let mut bumped = rows.clone();
            bumped[0][0] += 1;
            let r = chi_square_table_test(&bumped, false, 0.05).unwrap();
            prop_assert!(r.statistic > 1e-9);
        }
    }
}
