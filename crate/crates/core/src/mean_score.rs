//! Weighted least squares on mean blinding scores.
//!
//! Each (arm, timepoint) pair contributes one response function, the mean
//! score of the arm's answers at that timepoint. Response functions from the
//! same arm share subjects, so their covariance is taken from the arm's
//! multinomial over the nine guess pairs; arms are independent.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stat_kernel::chi_square_sf;
use crate::tables::{check_alpha, Arm, Guess, GuessSequenceDataset, PairTable, TestResult};

/// Score attached to each kind of answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreScheme {
    pub correct: f64,
    pub wrong: f64,
    pub dk: f64,
}

impl Default for ScoreScheme {
    /// 0 for a correct guess, 0.5 for a wrong one, 1 for DK.
    fn default() -> Self {
        Self {
            correct: 0.0,
            wrong: 0.5,
            dk: 1.0,
        }
    }
}

impl ScoreScheme {
    /// Scores must be finite and ordered correct < wrong < dk.
    pub fn new(correct: f64, wrong: f64, dk: f64) -> Result<Self> {
        if ![correct, wrong, dk].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("scores must be finite".into()));
        }
        if !(correct < wrong && wrong < dk) {
            return Err(Error::InvalidInput(
                "scores must satisfy correct < wrong < dk".into(),
            ));
        }
        Ok(Self { correct, wrong, dk })
    }

    pub fn score(&self, arm: Arm, guess: Guess) -> f64 {
        if guess == Guess::DontKnow {
            self.dk
        } else if guess == arm.correct_guess() {
            self.correct
        } else {
            self.wrong
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionLabel {
    pub arm: Arm,
    pub timepoint: usize,
}

/// Mean scores ordered P earlier, P later, T earlier, T later, with their
/// covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseFunctions {
    pub labels: Vec<FunctionLabel>,
    pub values: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// Arms in response-function order.
const FUNCTION_ARMS: [Arm; 2] = [Arm::Placebo, Arm::Test];

pub fn mean_scores(pair: &PairTable, scheme: &ScoreScheme) -> Result<ResponseFunctions> {
    let mut labels = Vec::with_capacity(4);
    let mut values = Vec::with_capacity(4);
    let mut covariance = vec![vec![0.0; 4]; 4];

    for (block, arm) in FUNCTION_ARMS.into_iter().enumerate() {
        let n = pair.arm_total(arm);
        if n == 0 {
            return Err(Error::EmptyArm(arm.label().into()));
        }
        let n = n as f64;
        let props: Vec<f64> = pair.counts[arm.index()]
            .iter()
            .map(|&c| c as f64 / n)
            .collect();
        // Score rows: earlier timepoint, then later.
        let scores: [Vec<f64>; 2] = [false, true].map(|later| {
            (0..9)
                .map(|cat| {
                    let (g_s, g_t) = PairTable::guesses(cat);
                    scheme.score(arm, if later { g_t } else { g_s })
                })
                .collect()
        });
        let means: [f64; 2] = [0, 1].map(|r| dot(&scores[r], &props));
        for r in 0..2 {
            for c in 0..2 {
                let second: f64 = (0..9).map(|k| scores[r][k] * scores[c][k] * props[k]).sum();
                covariance[2 * block + r][2 * block + c] = (second - means[r] * means[c]) / n;
            }
        }
        for (r, timepoint) in [pair.earlier, pair.later].into_iter().enumerate() {
            labels.push(FunctionLabel { arm, timepoint });
            values.push(means[r]);
        }
    }
    Ok(ResponseFunctions {
        labels,
        values,
        covariance,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Design matrix with one row per response function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub column_labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DesignMatrix {
    /// Saturated two-timepoint model: intercept, arm (P = +1, T = −1), time
    /// within T and time within P (earlier = +1, later = −1).
    pub fn two_timepoint_default() -> Self {
        Self {
            column_labels: vec![
                "intercept".into(),
                "arm".into(),
                "time(arm=T)".into(),
                "time(arm=P)".into(),
            ],
            rows: vec![
                vec![1.0, 1.0, 0.0, 1.0],
                vec![1.0, 1.0, 0.0, -1.0],
                vec![1.0, -1.0, 1.0, 0.0],
                vec![1.0, -1.0, -1.0, 0.0],
            ],
        }
    }

    /// The same design with the given columns removed.
    pub fn without_columns(&self, drop: &[usize]) -> Self {
        let keep: Vec<usize> = (0..self.column_labels.len())
            .filter(|c| !drop.contains(c))
            .collect();
        Self {
            column_labels: keep
                .iter()
                .map(|&c| self.column_labels[c].clone())
                .collect(),
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&c| r[c]).collect())
                .collect(),
        }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let cols = self.column_labels.len();
        if cols == 0 || self.rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput(
                "design rows must match the number of column labels".into(),
            ));
        }
        Ok(DMatrix::from_fn(self.rows.len(), cols, |i, j| {
            self.rows[i][j]
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WlsParameter {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub chi_square: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WLSFit {
    pub response: ResponseFunctions,
    pub design: DesignMatrix,
    pub parameters: Vec<WlsParameter>,
    pub covariance: Vec<Vec<f64>>,
    pub fitted: Vec<f64>,
    /// Residual chi-square when the design is not saturated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lack_of_fit: Option<TestResult>,
    /// The response covariance was singular and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    let tol = largest * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * 16.0;
    sv.iter().filter(|&&s| s > tol).count()
}

/// `b = (XᵀV⁻¹X)⁻¹ XᵀV⁻¹F` with Wald chi-square tests per parameter.
pub fn wls_fit(response: &ResponseFunctions, design: &DesignMatrix, alpha: f64) -> Result<WLSFit> {
    check_alpha(alpha)?;
    let x = design.to_matrix()?;
    let k = response.values.len();
    if x.nrows() != k {
        return Err(Error::InvalidInput(format!(
            "design has {} rows but there are {k} response functions",
            x.nrows()
        )));
    }
    let r = rank(&x);
    if r < x.ncols() {
        return Err(Error::RankDeficient {
            rank: r,
            columns: x.ncols(),
        });
    }
    let f = DVector::from_column_slice(&response.values);
    let v = DMatrix::from_fn(k, k, |i, j| response.covariance[i][j]);

    let (v_inv, pseudo_inverse) = match v.clone().cholesky() {
        Some(ch) if rank(&v) == k => (ch.inverse(), false),
        _ => {
            let pinv = v
                .clone()
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::Singular(e.to_string()))?;
            (pinv, true)
        }
    };

    let xt_vinv = x.transpose() * &v_inv;
    let info = &xt_vinv * &x;
    let cov_b = info
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("XᵀV⁻¹X is not invertible".into()))?;
    let b = &cov_b * (&xt_vinv * &f);
    let fitted = &x * &b;

    let parameters = design
        .column_labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let se = cov_b[(j, j)].max(0.0).sqrt();
            let chi_square = if se > 0.0 { (b[j] / se).powi(2) } else { 0.0 };
            WlsParameter {
                label: label.clone(),
                estimate: b[j],
                se,
                chi_square,
                p_value: chi_square_sf(chi_square, 1),
            }
        })
        .collect();

    let lack_of_fit = (k > x.ncols()).then(|| {
        let resid = &f - &fitted;
        let q = (resid.transpose() * &v_inv * &resid)[(0, 0)].max(0.0);
        TestResult::chi_square(q, (k - x.ncols()) as u32, alpha)
    });

    Ok(WLSFit {
        response: response.clone(),
        design: design.clone(),
        parameters,
        covariance: (0..cov_b.nrows())
            .map(|i| cov_b.row(i).iter().copied().collect())
            .collect(),
        fitted: fitted.iter().copied().collect(),
        lack_of_fit,
        pseudo_inverse,
    })
}

/// One saturated fit per consecutive pair of timepoints.
pub fn successive_time_wls(
    dataset: &GuessSequenceDataset,
    scheme: &ScoreScheme,
    design: &DesignMatrix,
    alpha: f64,
) -> Result<Vec<WLSFit>> {
    let t_max = dataset.timepoint_count();
    if t_max < 2 {
        return Err(Error::TooFewTimepoints {
            analysis: "wls",
            needed: 2,
            found: t_max,
        });
    }
    (1..t_max)
        .map(|t| {
            let pair = dataset.pair_table(t, t + 1)?;
            wls_fit(&mean_scores(&pair, scheme)?, design, alpha)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::fixtures::{dataset_from_pair_rows, TWO_VISIT};
    use crate::tables::SubjectRecord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn two_visit_pair() -> PairTable {
        PairTable {
            earlier: 1,
            later: 2,
            counts: TWO_VISIT,
        }
    }

    #[test]
    fn two_visit_response_functions() {
        let rf = mean_scores(&two_visit_pair(), &ScoreScheme::default()).unwrap();
        let expected = [0.62, 0.57, 0.64, 0.45];
        for (v, e) in rf.values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(
            rf.labels[0],
            FunctionLabel {
                arm: Arm::Placebo,
                timepoint: 1
            }
        );
        assert_eq!(
            rf.labels[3],
            FunctionLabel {
                arm: Arm::Test,
                timepoint: 2
            }
        );
        // Arms are independent.
        assert_eq!(rf.covariance[0][2], 0.0);
        assert_eq!(rf.covariance[1][3], 0.0);
    }

    #[test]
    fn two_visit_saturated_fit() {
        let rf = mean_scores(&two_visit_pair(), &ScoreScheme::default()).unwrap();
        let fit = wls_fit(&rf, &DesignMatrix::two_timepoint_default(), 0.05).unwrap();
        let est: Vec<f64> = fit.parameters.iter().map(|p| p.estimate).collect();
        for (e, x) in est.iter().zip([0.57, 0.025, 0.095, 0.025]) {
            assert!((e - x).abs() < 1e-10, "{est:?}");
        }
        for (p, se) in fit.parameters.iter().zip([0.0319, 0.0319, 0.0367, 0.0341]) {
            assert!((p.se - se).abs() < 0.0015);
        }
        for (p, chi) in fit.parameters.iter().zip([318.61, 0.61, 6.71, 0.54]) {
            assert!((p.chi_square - chi).abs() <= 0.02 * chi);
            assert!(
                (p.chi_square - (p.estimate / p.se).powi(2)).abs() < 1e-9 * p.chi_square.max(1.0)
            );
        }
        let significant: Vec<bool> = fit.parameters.iter().map(|p| p.p_value < 0.05).collect();
        assert_eq!(significant, vec![true, false, true, false]);
        for (fv, f) in fit.fitted.iter().zip(&rf.values) {
            assert!((fv - f).abs() < 1e-12);
        }
        assert!(fit.lack_of_fit.is_none());
        assert!(!fit.pseudo_inverse);
    }

    #[test]
    fn all_dk_arm() {
        let mut counts = TWO_VISIT;
        counts[1] = [0, 0, 0, 0, 0, 0, 0, 0, 20];
        let pair = PairTable {
            earlier: 1,
            later: 2,
            counts,
        };
        let rf = mean_scores(&pair, &ScoreScheme::default()).unwrap();
        assert_eq!(&rf.values[..2], &[1.0, 1.0]);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(rf.covariance[i][j], 0.0);
            }
        }
    }

    #[test]
    fn empty_arm_errors() {
        let mut counts = TWO_VISIT;
        counts[0] = [0; 9];
        let pair = PairTable {
            earlier: 1,
            later: 2,
            counts,
        };
        assert!(matches!(
            mean_scores(&pair, &ScoreScheme::default()),
            Err(Error::EmptyArm(_))
        ));
    }

    #[test]
    fn constant_over_time_gives_zero_time_effects() {
        // Every subject keeps their answer, so both timepoints share F.
        let pair = PairTable {
            earlier: 1,
            later: 2,
            counts: [[6, 1, 2, 1, 7, 1, 2, 1, 9], [4, 1, 1, 1, 8, 2, 1, 2, 11]],
        };
        let mut symmetric = pair;
        for arm in 0..2 {
            for (a, b) in [(1, 3), (2, 6), (5, 7)] {
                let s = pair.counts[arm][a] + pair.counts[arm][b];
                symmetric.counts[arm][a] = s;
                symmetric.counts[arm][b] = s;
            }
        }
        let rf = mean_scores(&symmetric, &ScoreScheme::default()).unwrap();
        let fit = wls_fit(&rf, &DesignMatrix::two_timepoint_default(), 0.05).unwrap();
        assert!(fit.parameters[2].estimate.abs() < 1e-12);
        assert!(fit.parameters[3].estimate.abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_design() {
        let rf = mean_scores(&two_visit_pair(), &ScoreScheme::default()).unwrap();
        let mut design = DesignMatrix::two_timepoint_default();
        for row in design.rows.iter_mut() {
            row.push(row[0] + row[1]);
        }
        design.column_labels.push("dup".into());
        assert!(matches!(
            wls_fit(&rf, &design, 0.05),
            Err(Error::RankDeficient {
                rank: 4,
                columns: 5
            })
        ));
    }

    #[test]
    fn lack_of_fit_for_reduced_design() {
        let rf = mean_scores(&two_visit_pair(), &ScoreScheme::default()).unwrap();
        let reduced = DesignMatrix::two_timepoint_default().without_columns(&[3]);
        let fit = wls_fit(&rf, &reduced, 0.05).unwrap();
        let lof = fit.lack_of_fit.unwrap();
        assert_eq!(lof.df, 1);
        assert!(lof.statistic > 0.0);

        // Put F exactly in the column space: no time effect within P.
        let mut exact = rf.clone();
        let mean_p = (exact.values[0] + exact.values[1]) / 2.0;
        exact.values[0] = mean_p;
        exact.values[1] = mean_p;
        let fit = wls_fit(&exact, &reduced, 0.05).unwrap();
        assert!(fit.lack_of_fit.unwrap().statistic < 1e-18);
    }

    /// Monte-Carlo oracle for the response covariance: resample each arm's
    /// subjects and take the empirical covariance of the mean scores.
    #[test]
    fn covariance_matches_resampling() {
        let pair = two_visit_pair();
        let scheme = ScoreScheme::default();
        let rf = mean_scores(&pair, &scheme).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let reps = 100_000;
        for (block, arm) in FUNCTION_ARMS.into_iter().enumerate() {
            let row = pair.counts[arm.index()];
            let n = row.iter().sum::<u64>() as usize;
            let cumulative: Vec<u64> = row
                .iter()
                .scan(0, |acc, &c| {
                    *acc += c;
                    Some(*acc)
                })
                .collect();
            let mut samples = Vec::with_capacity(reps);
            for _ in 0..reps {
                let (mut s0, mut s1) = (0.0, 0.0);
                for _ in 0..n {
                    let u = rng.random_range(0..n as u64);
                    let cat = cumulative.iter().position(|&c| u < c).unwrap();
                    let (g_s, g_t) = PairTable::guesses(cat);
                    s0 += scheme.score(arm, g_s);
                    s1 += scheme.score(arm, g_t);
                }
                samples.push((s0 / n as f64, s1 / n as f64));
            }
            let m0 = samples.iter().map(|s| s.0).sum::<f64>() / reps as f64;
            let m1 = samples.iter().map(|s| s.1).sum::<f64>() / reps as f64;
            let c00 = samples.iter().map(|s| (s.0 - m0).powi(2)).sum::<f64>() / reps as f64;
            let c11 = samples.iter().map(|s| (s.1 - m1).powi(2)).sum::<f64>() / reps as f64;
            let c01 = samples.iter().map(|s| (s.0 - m0) * (s.1 - m1)).sum::<f64>() / reps as f64;
            let v = &rf.covariance;
            let b = 2 * block;
            // Relative Monte-Carlo error of a variance estimate is ~sqrt(2/reps).
            assert!((c00 - v[b][b]).abs() < 0.02 * v[b][b]);
            assert!((c11 - v[b + 1][b + 1]).abs() < 0.02 * v[b + 1][b + 1]);
            assert!((c01 - v[b][b + 1]).abs() < 0.02 * (v[b][b] * v[b + 1][b + 1]).sqrt());
        }
    }

    fn subjects(patterns: &[(Arm, [Guess; 3], usize)]) -> GuessSequenceDataset {
        let mut out = Vec::new();
        for &(arm, g, n) in patterns {
            for _ in 0..n {
                out.push(SubjectRecord {
                    subject_id: format!("s{}", out.len()),
                    arm,
                    guesses: g.to_vec(),
                });
            }
        }
        GuessSequenceDataset::new(out).unwrap()
    }

    #[test]
    fn successive_fits() {
        let ds = dataset_from_pair_rows(TWO_VISIT);
        let design = DesignMatrix::two_timepoint_default();
        let fits = successive_time_wls(&ds, &ScoreScheme::default(), &design, 0.05).unwrap();
        assert_eq!(fits.len(), 1);
        let direct = wls_fit(
            &mean_scores(&ds.pair_table(1, 2).unwrap(), &ScoreScheme::default()).unwrap(),
            &design,
            0.05,
        )
        .unwrap();
        assert_eq!(fits[0], direct);

        use Guess::*;
        // Stable from t1 to t2, then 40% of each arm leaves DK for the right answer.
        let ds = subjects(&[
            (Arm::Test, [DontKnow, DontKnow, Test], 40),
            (Arm::Test, [DontKnow, DontKnow, DontKnow], 20),
            (Arm::Test, [Test, Placebo, Placebo], 10),
            (Arm::Test, [Placebo, Test, Test], 10),
            (Arm::Test, [Test, Test, Test], 10),
            (Arm::Test, [Placebo, Placebo, Placebo], 10),
            (Arm::Placebo, [DontKnow, DontKnow, Placebo], 40),
            (Arm::Placebo, [DontKnow, DontKnow, DontKnow], 20),
            (Arm::Placebo, [Test, Placebo, Placebo], 10),
            (Arm::Placebo, [Placebo, Test, Test], 10),
            (Arm::Placebo, [Test, Test, Test], 10),
            (Arm::Placebo, [Placebo, Placebo, Placebo], 10),
        ]);
        let fits = successive_time_wls(&ds, &ScoreScheme::default(), &design, 0.05).unwrap();
        assert_eq!(fits.len(), 2);
        for fit in &fits {
            for (fv, f) in fit.fitted.iter().zip(&fit.response.values) {
                assert!((fv - f).abs() < 1e-12);
            }
        }
        assert!(fits[0].parameters[2].p_value > 0.05 && fits[0].parameters[3].p_value > 0.05);
        assert!(fits[1].parameters[2].p_value < 0.05 && fits[1].parameters[3].p_value < 0.05);
    }

    fn pair_strategy() -> impl Strategy<Value = PairTable> {
        prop::array::uniform2(prop::array::uniform9(1u64..30)).prop_map(|counts| PairTable {
            earlier: 1,
            later: 2,
            counts,
        })
    }

    proptest! {
        #[test]
        fn covariance_is_psd(pair in pair_strategy()) {
            let rf = mean_scores(&pair, &ScoreScheme::default()).unwrap();
            let v = DMatrix::from_fn(4, 4, |i, j| rf.covariance[i][j]);
            prop_assert!((&v - v.transpose()).abs().max() < 1e-15);
            let eig = v.symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10));
        }

        #[test]
        fn affine_scores(pair in pair_strategy(), a in 0.2f64..3.0, c in -2.0f64..2.0) {
            let design = DesignMatrix::two_timepoint_default();
            let base = ScoreScheme::default();
            let moved = ScoreScheme::new(a * base.correct + c, a * base.wrong + c, a * base.dk + c).unwrap();
            let f0 = wls_fit(&mean_scores(&pair, &base).unwrap(), &design, 0.05).unwrap();
            let f1 = wls_fit(&mean_scores(&pair, &moved).unwrap(), &design, 0.05).unwrap();
            let tol = 1e-8;
            prop_assert!((f1.parameters[0].estimate - (a * f0.parameters[0].estimate + c)).abs() < tol);
            for j in 1..4 {
                prop_assert!((f1.parameters[j].estimate - a * f0.parameters[j].estimate).abs() < tol);
                let (x0, x1) = (f0.parameters[j].chi_square, f1.parameters[j].chi_square);
                prop_assert!((x0 - x1).abs() <= 1e-6 * x0.max(1.0));
            }
        }

        #[test]
        fn arm_swap(pair in pair_strategy()) {
            let mut swapped = PairTable { earlier: 1, later: 2, counts: [[0; 9]; 2] };
            for arm in Arm::ALL {
                for cat in 0..9 {
                    let (g_s, g_t) = PairTable::guesses(cat);
                    let target = PairTable::category(g_s.swapped(), g_t.swapped());
                    swapped.counts[arm.swapped().index()][target] = pair.counts[arm.index()][cat];
                }
            }
            let design = DesignMatrix::two_timepoint_default();
            let a = wls_fit(&mean_scores(&pair, &ScoreScheme::default()).unwrap(), &design, 0.05).unwrap();
            let b = wls_fit(&mean_scores(&swapped, &ScoreScheme::default()).unwrap(), &design, 0.05).unwrap();
            let fa = &a.response.values;
            let fb = &b.response.values;
            prop_assert!((fa[0] - fb[2]).abs() < 1e-12 && (fa[1] - fb[3]).abs() < 1e-12);
            prop_assert!((fa[2] - fb[0]).abs() < 1e-12 && (fa[3] - fb[1]).abs() < 1e-12);
            prop_assert!((a.parameters[1].estimate + b.parameters[1].estimate).abs() < 1e-10);
            prop_assert!((a.parameters[2].estimate - b.parameters[3].estimate).abs() < 1e-10);
        }
    }
}
