//! Baseline-category logistic regression of the guess on time, one arm at a
//! time, with the arm's correct answer as the reference category.
//!
//! For the two other categories `c`:
//!
//! ```text
//! ln(π_c / π_ref) = α_c + β_c · time
//! ```
//!
//! with either a shared slope (`β_c = β`) or one slope per category. Fitted
//! by Newton–Raphson with step halving; standard errors come from the
//! inverse information at the optimum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stat_kernel::{chi_square_sf, normal_sf};
use crate::tables::{check_alpha, Arm, Guess, GuessSequenceDataset, TestResult};

pub const MAX_ITERATIONS: usize = 100;
pub const SCORE_TOLERANCE: f64 = 1e-8;
/// Normal critical value for the reported 95% Wald intervals.
pub const WALD_Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeMode {
    CommonSlope,
    SeparateSlopes,
}

impl SlopeMode {
    pub fn parameter_count(self) -> usize {
        match self {
            SlopeMode::CommonSlope => 3,
            SlopeMode::SeparateSlopes => 4,
        }
    }
}

/// Per-timepoint guess counts for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitData {
    pub arm: Arm,
    /// `counts[t]` ordered T, P, DK.
    pub counts: Vec<[u64; 3]>,
    pub times: Vec<f64>,
}

impl LogitData {
    pub fn new(arm: Arm, counts: Vec<[u64; 3]>, times: Vec<f64>) -> Result<Self> {
        if counts.len() != times.len() {
            return Err(Error::InvalidInput(
                "one time code per timepoint required".into(),
            ));
        }
        if counts.len() < 2 {
            return Err(Error::TooFewTimepoints {
                analysis: "logit",
                needed: 2,
                found: counts.len(),
            });
        }
        if let Some(t) = counts.iter().position(|c| c.iter().sum::<u64>() == 0) {
            return Err(Error::InvalidInput(format!(
                "arm {arm} has no answers at timepoint {}",
                t + 1
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || times.iter().all(|&t| t == times[0]) {
            return Err(Error::InvalidInput(
                "time codes must be finite and not all equal".into(),
            ));
        }
        Ok(Self { arm, counts, times })
    }

    /// Counts for `arm` at every timepoint, coded 1, 2, ….
    pub fn from_dataset(dataset: &GuessSequenceDataset, arm: Arm) -> Result<Self> {
        let counts = (1..=dataset.timepoint_count())
            .map(|t| dataset.marginal_table(t).map(|tab| tab.counts[arm.index()]))
            .collect::<Result<Vec<_>>>()?;
        let times = (1..=counts.len()).map(|t| t as f64).collect();
        Self::new(arm, counts, times)
    }

    pub fn reference(&self) -> Guess {
        self.arm.correct_guess()
    }

    /// The two modeled categories, in T, P, DK order.
    pub fn modeled(&self) -> [Guess; 2] {
        let r = self.reference();
        let mut it = Guess::ALL.into_iter().filter(move |&g| g != r);
        [it.next().unwrap(), it.next().unwrap()]
    }

    pub fn with_times(&self, times: Vec<f64>) -> Result<Self> {
        Self::new(self.arm, self.counts.clone(), times)
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the counts and time codes.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(self.arm.index() as u64);
        for (c, t) in self.counts.iter().zip(&self.times) {
            c.iter().for_each(|&x| feed(x));
            feed(t.to_bits());
        }
        h
    }

    /// Rows of d η / d θ for the two modeled categories at time `x`.
    fn design(mode: SlopeMode, x: f64) -> [Vec<f64>; 2] {
        match mode {
            SlopeMode::CommonSlope => [vec![1.0, 0.0, x], vec![0.0, 1.0, x]],
            SlopeMode::SeparateSlopes => [vec![1.0, x, 0.0, 0.0], vec![0.0, 0.0, 1.0, x]],
        }
    }

    fn linear_predictors(mode: SlopeMode, theta: &[f64], x: f64) -> [f64; 2] {
        Self::design(mode, x).map(|row| row.iter().zip(theta).map(|(a, b)| a * b).sum())
    }

    /// Modeled-category probabilities and ln(1 + e^η₁ + e^η₂).
    fn probabilities_at(eta: [f64; 2]) -> ([f64; 2], f64) {
        let m = eta[0].max(eta[1]).max(0.0);
        let e0 = (-m).exp();
        let e1 = (eta[0] - m).exp();
        let e2 = (eta[1] - m).exp();
        let s = e0 + e1 + e2;
        ([e1 / s, e2 / s], m + s.ln())
    }

    fn modeled_counts(&self, t: usize) -> ([f64; 2], f64) {
        let c = self.counts[t];
        let [a, b] = self.modeled();
        (
            [c[a.index()] as f64, c[b.index()] as f64],
            c.iter().sum::<u64>() as f64,
        )
    }

    pub fn log_likelihood(&self, mode: SlopeMode, theta: &[f64]) -> f64 {
        (0..self.counts.len())
            .map(|t| {
                let eta = Self::linear_predictors(mode, theta, self.times[t]);
                let (_, lse) = Self::probabilities_at(eta);
                let (y, n) = self.modeled_counts(t);
                y[0] * eta[0] + y[1] * eta[1] - n * lse
            })
            .sum()
    }

    /// Gradient of [`LogitData::log_likelihood`].
    pub fn score(&self, mode: SlopeMode, theta: &[f64]) -> Vec<f64> {
        let k = mode.parameter_count();
        let mut g = vec![0.0; k];
        for t in 0..self.counts.len() {
            let z = Self::design(mode, self.times[t]);
            let eta = Self::linear_predictors(mode, theta, self.times[t]);
            let (pi, _) = Self::probabilities_at(eta);
            let (y, n) = self.modeled_counts(t);
            for c in 0..2 {
                let resid = y[c] - n * pi[c];
                for j in 0..k {
                    g[j] += z[c][j] * resid;
                }
            }
        }
        g
    }

    /// Observed (= expected) information matrix.
    pub fn information(&self, mode: SlopeMode, theta: &[f64]) -> DMatrix<f64> {
        let k = mode.parameter_count();
        let mut info = DMatrix::zeros(k, k);
        for t in 0..self.counts.len() {
            let z = Self::design(mode, self.times[t]);
            let eta = Self::linear_predictors(mode, theta, self.times[t]);
            let (pi, _) = Self::probabilities_at(eta);
            let (_, n) = self.modeled_counts(t);
            let w = [
                [pi[0] * (1.0 - pi[0]), -pi[0] * pi[1]],
                [-pi[0] * pi[1], pi[1] * (1.0 - pi[1])],
            ];
            for a in 0..2 {
                for b in 0..2 {
                    for i in 0..k {
                        for j in 0..k {
                            info[(i, j)] += n * z[a][i] * w[a][b] * z[b][j];
                        }
                    }
                }
            }
        }
        info
    }

    /// Category probabilities (T, P, DK order) at every timepoint.
    pub fn fitted_probabilities(&self, mode: SlopeMode, theta: &[f64]) -> Vec<[f64; 3]> {
        let [a, b] = self.modeled();
        let r = self.reference();
        self.times
            .iter()
            .map(|&x| {
                let (pi, _) = Self::probabilities_at(Self::linear_predictors(mode, theta, x));
                let mut out = [0.0; 3];
                out[a.index()] = pi[0];
                out[b.index()] = pi[1];
                out[r.index()] = 1.0 - pi[0] - pi[1];
                out
            })
            .collect()
    }

    pub fn coefficient_labels(&self, mode: SlopeMode) -> Vec<String> {
        let [a, b] = self.modeled().map(Guess::label);
        match mode {
            SlopeMode::CommonSlope => vec![
                format!("intercept[{a}]"),
                format!("intercept[{b}]"),
                "time".into(),
            ],
            SlopeMode::SeparateSlopes => vec![
                format!("intercept[{a}]"),
                format!("time[{a}]"),
                format!("intercept[{b}]"),
                format!("time[{b}]"),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitCoefficient {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    /// Two-sided Wald p-value.
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub arm: Arm,
    pub mode: SlopeMode,
    pub reference: Guess,
    pub coefficients: Vec<LogitCoefficient>,
    pub covariance: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_score: f64,
    pub data_fingerprint: u64,
}

impl LogitFit {
    pub fn coefficient(&self, label: &str) -> Option<&LogitCoefficient> {
        self.coefficients.iter().find(|c| c.label == label)
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn fit(data: &LogitData, mode: SlopeMode) -> Result<LogitFit> {
    for g in Guess::ALL {
        if data.counts.iter().all(|c| c[g.index()] == 0) {
            return Err(Error::InfiniteEstimate(g.label().into()));
        }
    }
    let k = mode.parameter_count();
    let mut theta = vec![0.0; k];
    let mut ll = data.log_likelihood(mode, &theta);
    let mut score = data.score(mode, &theta);
    let mut iterations = 0;

    while max_abs(&score) > SCORE_TOLERANCE {
        if iterations == MAX_ITERATIONS {
            return Err(Error::NonConvergence {
                iterations,
                max_score: max_abs(&score),
            });
        }
        iterations += 1;
        let info = data.information(mode, &theta);
        let step = info
            .cholesky()
            .ok_or_else(|| Error::Singular("information matrix not positive definite".into()))?
            .solve(&DVector::from_vec(score.clone()));

        let mut scale = 1.0;
        loop {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t + scale * s)
                .collect();
            let cand_ll = data.log_likelihood(mode, &candidate);
            if cand_ll >= ll - 1e-12 * (1.0 + ll.abs()) || scale < 1e-10 {
                theta = candidate;
                ll = cand_ll;
                break;
            }
            scale /= 2.0;
        }
        score = data.score(mode, &theta);
    }

    let cov = data
        .information(mode, &theta)
        .try_inverse()
        .ok_or_else(|| Error::Singular("information matrix not invertible".into()))?;
    let coefficients = data
        .coefficient_labels(mode)
        .into_iter()
        .enumerate()
        .map(|(j, label)| {
            let estimate = theta[j];
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = estimate / se;
            LogitCoefficient {
                label,
                estimate,
                se,
                z,
                p_value: (2.0 * normal_sf(z.abs())).min(1.0),
                ci_lower: estimate - WALD_Z_95 * se,
                ci_upper: estimate + WALD_Z_95 * se,
            }
        })
        .collect();
    Ok(LogitFit {
        arm: data.arm,
        mode,
        reference: data.reference(),
        coefficients,
        covariance: (0..k)
            .map(|i| cov.row(i).iter().copied().collect())
            .collect(),
        log_likelihood: ll,
        converged: true,
        iterations,
        max_abs_score: max_abs(&score),
        data_fingerprint: data.fingerprint(),
    })
}

pub fn fit_common_slope(data: &LogitData) -> Result<LogitFit> {
    fit(data, SlopeMode::CommonSlope)
}

pub fn fit_separate_slopes(data: &LogitData) -> Result<LogitFit> {
    fit(data, SlopeMode::SeparateSlopes)
}

/// Likelihood-ratio test of a shared slope against separate slopes.
pub fn deviance_compare(common: &LogitFit, separate: &LogitFit, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    if common.mode != SlopeMode::CommonSlope || separate.mode != SlopeMode::SeparateSlopes {
        return Err(Error::MismatchedFitModes(format!(
            "expected common_slope and separate_slopes, got {:?} and {:?}",
            common.mode, separate.mode
        )));
    }
    if common.data_fingerprint != separate.data_fingerprint {
        return Err(Error::MismatchedData);
    }
    if !(common.converged && separate.converged) {
        return Err(Error::NonConvergence {
            iterations: common.iterations.max(separate.iterations),
            max_score: common.max_abs_score.max(separate.max_abs_score),
        });
    }
    let statistic = (2.0 * (separate.log_likelihood - common.log_likelihood)).max(0.0);
    Ok(TestResult::new(
        statistic,
        1,
        chi_square_sf(statistic, 1),
        alpha,
    ))
}
