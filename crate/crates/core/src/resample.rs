//! Seeded Monte-Carlo study of the blinding index.
//!
//! Replicate `i` draws from ChaCha stream `i` of the configured seed, so the
//! output is bit-identical for any worker count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indices::{bi_from_cells, james_bi, BIEstimate};
use crate::stat_kernel::{normal_quantile, normality_suite, NormalityReport};
use crate::tables::{
    check_alpha, chi_square_table_test, Arm, BlindingTable, Guess, GuessSequenceDataset,
    SubjectRecord, TestResult,
};
use crate::warning::{Warning, WarningCode};

pub const DEFAULT_REPLICATES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmHandling {
    #[default]
    MergedIfHomogeneous,
    AlwaysPerArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub arm_handling: ArmHandling,
    /// Worker threads; `None` uses rayon's default.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            replicates: DEFAULT_REPLICATES,
            seed,
            alpha: 0.05,
            arm_handling: ArmHandling::default(),
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidInput(format!(
                "at least 2 replicates required, got {}",
                self.replicates
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidInput("thread count must be positive".into()));
        }
        check_alpha(self.alpha)
    }

    fn run<T, F>(&self, replicate: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut ChaCha8Rng) -> T + Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads.unwrap_or(0))
            .build()
            .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
        Ok(pool.install(|| {
            (0..self.replicates)
                .into_par_iter()
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                    rng.set_stream(i as u64);
                    replicate(&mut rng)
                })
                .collect()
        }))
    }
}

/// Summary of one simulated quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantitySummary {
    pub true_value: f64,
    pub mean: f64,
    /// Divisor M − 1.
    pub sd: f64,
    /// mean ± z₁₋α/₂ · sd.
    pub normal_ci: [f64; 2],
    /// Order statistics of the replicate values.
    pub percentile_ci: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normality: Option<Vec<NormalityReport>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normality_note: Option<String>,
    pub replicates: usize,
    #[serde(skip)]
    pub values: Vec<f64>,
}

impl QuantitySummary {
    fn new(true_value: f64, values: Vec<f64>, alpha: f64) -> Result<Self> {
        let m = values.len();
        let mean = values.iter().sum::<f64>() / m as f64;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
        let z = normal_quantile(1.0 - alpha / 2.0)?;

        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let lo = ((m as f64 * alpha / 2.0).floor() as usize).min(m - 1);
        let hi = ((m as f64 * (1.0 - alpha / 2.0)).ceil() as usize).clamp(1, m) - 1;

        let (normality, normality_note) = match normality_suite(&values) {
            Ok(reports) => (Some(reports), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(Self {
            true_value,
            mean,
            sd,
            normal_ci: [mean - z * sd, mean + z * sd],
            percentile_ci: [sorted[lo], sorted[hi]],
            normality,
            normality_note,
            replicates: m,
            values,
        })
    }

    /// True when every normality test ran and none rejected at 0.05.
    pub fn normality_accepted(&self) -> bool {
        self.normality
            .as_ref()
            .is_some_and(|r| r.iter().all(|t| !t.reject_at_005))
    }

    pub fn ci_contains_zero(&self) -> bool {
        self.normal_ci[0] <= 0.0 && 0.0 <= self.normal_ci[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub n: u64,
    pub probabilities: [[f64; 3]; 2],
    pub bi: QuantitySummary,
    /// Replicates in which nobody guessed or the guessers' chance agreement
    /// was zero.
    pub degenerate_replicates: usize,
    pub warnings: Vec<Warning>,
}

fn multinomial<R: Rng>(rng: &mut R, n: u64, probs: &[f64], out: &mut [u64]) {
    let k = probs.len();
    let mut tail: f64 = probs.iter().sum();
    let mut remaining = n;
    for i in 0..k - 1 {
        let p = if tail > 0.0 {
            (probs[i] / tail).clamp(0.0, 1.0)
        } else {
            0.0
        };
        tail -= probs[i];
        let x = if remaining == 0 || p == 0.0 {
            0
        } else if p >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, p)
                .expect("valid binomial")
                .sample(rng)
        };
        out[i] = x;
        remaining -= x;
    }
    out[k - 1] = remaining;
}

fn check_probabilities(probs: &[[f64; 3]; 2]) -> Result<()> {
    let flat = probs.iter().flatten();
    if flat.clone().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidProbabilities(
            "probabilities must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = flat.sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidProbabilities(format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Draws `cfg.replicates` six-cell multinomial tables of size `n` from
/// `probs` (rows T, P; columns T, P, DK) and summarizes the index.
pub fn simulate_bi_distribution(
    probs: [[f64; 3]; 2],
    n: u64,
    cfg: &SimConfig,
) -> Result<SimSummary> {
    cfg.validate()?;
    check_probabilities(&probs)?;
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "sample size must be at least 2, got {n}"
        )));
    }
    let flat: Vec<f64> = probs.iter().flatten().copied().collect();
    let draws = cfg.run(|rng| {
        let mut cells = [0u64; 6];
        multinomial(rng, n, &flat, &mut cells);
        let table = [
            [cells[0] as f64, cells[1] as f64, cells[2] as f64],
            [cells[3] as f64, cells[4] as f64, cells[5] as f64],
        ];
        let (bi, _, _, degenerate) = bi_from_cells(&table);
        (bi, degenerate)
    })?;

    let degenerate_replicates = draws.iter().filter(|d| d.1).count();
    let (true_bi, ..) = bi_from_cells(&probs);
    let bi = QuantitySummary::new(true_bi, draws.into_iter().map(|d| d.0).collect(), cfg.alpha)?;

    let mut warnings = Vec::new();
    if degenerate_replicates > 0 {
        warnings.push(Warning::new(
            WarningCode::DegenerateIndex,
            format!("{degenerate_replicates} replicates had a degenerate index"),
        ));
    }
    if let Some(note) = &bi.normality_note {
        warnings.push(Warning::new(
            WarningCode::NormalityUnavailable,
            note.clone(),
        ));
    }
    Ok(SimSummary {
        n,
        probabilities: probs,
        bi,
        degenerate_replicates,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimepointSummary {
    pub timepoint: usize,
    pub estimate: BIEstimate,
    pub simulation: QuantitySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceSummary {
    pub earlier: usize,
    pub later: usize,
    /// bi(later) − bi(earlier) on the observed data.
    pub true_difference: f64,
    pub simulation: QuantitySummary,
    /// Share of zero-centered replicate deviations at least as large in
    /// absolute value as the observed difference.
    pub empirical_p: f64,
    /// Share of replicate differences lying beyond the observed difference,
    /// away from zero.
    pub exceedance_proportion: f64,
    /// Normal-theory interval excludes zero.
    pub significant: bool,
    pub zero_variance: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Each arm's subjects resampled as one multinomial over their observed
    /// guess sequences, arm sizes fixed.
    PerArmJointSequences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BIComparison {
    pub timepoints: Vec<TimepointSummary>,
    pub differences: Vec<DifferenceSummary>,
    /// Arms compared over the guess-sequence categories present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homogeneity: Option<TestResult>,
    pub arm_handling: ArmHandling,
    pub sampling_mode: SamplingMode,
    pub replicates: usize,
    pub seed: u64,
    pub warnings: Vec<Warning>,
}

impl BIComparison {
    pub fn difference(&self, earlier: usize, later: usize) -> Option<&DifferenceSummary> {
        self.differences
            .iter()
            .find(|d| d.earlier == earlier && d.later == later)
    }
}

struct ArmSequences {
    arm: Arm,
    size: u64,
    sequences: Vec<Vec<Guess>>,
    probabilities: Vec<f64>,
}

/// Compares the index across timepoints by resampling subjects within each
/// arm, so every replicate keeps each subject's guesses together.
pub fn compare_bi_over_time(
    dataset: &GuessSequenceDataset,
    pairs: &[(usize, usize)],
    cfg: &SimConfig,
) -> Result<BIComparison> {
    cfg.validate()?;
    let t_max = dataset.timepoint_count();
    for &(a, b) in pairs {
        for t in [a, b] {
            if t == 0 || t > t_max {
                return Err(Error::TimepointOutOfRange {
                    timepoint: t,
                    max: t_max,
                });
            }
        }
    }
    for arm in Arm::ALL {
        if dataset.arm_size(arm) == 0 {
            return Err(Error::EmptyArm(arm.label().into()));
        }
    }

    let mut warnings = vec![Warning::new(
        WarningCode::PerArmResampling,
        "subjects are resampled within each arm over their guess sequences; arms are never \
         pooled because the index needs arm identity",
    )];

    let per_arm: Vec<_> = Arm::ALL.map(|arm| dataset.sequence_counts(arm)).into();
    let mut categories: Vec<&Vec<Guess>> = per_arm.iter().flat_map(|m| m.keys()).collect();
    categories.sort();
    categories.dedup();
    let rows: Vec<Vec<u64>> = per_arm
        .iter()
        .map(|m| {
            categories
                .iter()
                .map(|c| m.get(*c).copied().unwrap_or(0))
                .collect()
        })
        .collect();
    let homogeneity = match chi_square_table_test(&rows, false, cfg.alpha) {
        Ok(test) => {
            if test.rejected {
                warnings.push(Warning::new(
                    WarningCode::ArmsHeterogeneous,
                    format!(
                        "arms differ over guess sequences (p = {}); per-arm resampling kept",
                        test.p_value
                    ),
                ));
            }
            if test.has_small_expected() {
                warnings.push(Warning::new(
                    WarningCode::SmallExpectedCount,
                    "sequence homogeneity test has expected counts below 5",
                ));
            }
            Some(test)
        }
        Err(e) => {
            warnings.push(Warning::new(
                WarningCode::RowHomogeneityUnavailable,
                format!("sequence homogeneity test unavailable: {e}"),
            ));
            None
        }
    };

    let arms: Vec<ArmSequences> = Arm::ALL
        .iter()
        .zip(&per_arm)
        .map(|(&arm, counts)| {
            let size: u64 = counts.values().sum();
            ArmSequences {
                arm,
                size,
                sequences: counts.keys().cloned().collect(),
                probabilities: counts.values().map(|&c| c as f64 / size as f64).collect(),
            }
        })
        .collect();

    let replicates: Vec<Vec<f64>> = cfg.run(|rng| {
        let mut cells = vec![[[0.0f64; 3]; 2]; t_max];
        for a in &arms {
            let mut draw = vec![0u64; a.sequences.len()];
            multinomial(rng, a.size, &a.probabilities, &mut draw);
            for (seq, &k) in a.sequences.iter().zip(&draw) {
                for (t, g) in seq.iter().enumerate() {
                    cells[t][a.arm.index()][g.index()] += k as f64;
                }
            }
        }
        cells.iter().map(|c| bi_from_cells(c).0).collect()
    })?;

    let mut timepoints = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let estimate = james_bi(&dataset.marginal_table(t)?)?;
        let values = replicates.iter().map(|r| r[t - 1]).collect();
        let simulation = QuantitySummary::new(estimate.bi, values, cfg.alpha)?;
        if estimate.degenerate {
            warnings.push(Warning::new(
                WarningCode::DegenerateIndex,
                format!("index at timepoint {t} is degenerate"),
            ));
        }
        timepoints.push(TimepointSummary {
            timepoint: t,
            estimate,
            simulation,
        });
    }

    let mut differences = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let observed = timepoints[b - 1].estimate.bi - timepoints[a - 1].estimate.bi;
        let values: Vec<f64> = replicates.iter().map(|r| r[b - 1] - r[a - 1]).collect();
        let simulation = QuantitySummary::new(observed, values, cfg.alpha)?;
        let m = simulation.replicates as f64;
        let empirical_p = simulation
            .values
            .iter()
            .filter(|&&d| (d - simulation.mean).abs() >= observed.abs())
            .count() as f64
            / m;
        let exceedance_proportion = simulation
            .values
            .iter()
            .filter(|&&d| {
                if observed < 0.0 {
                    d < observed
                } else {
                    d > observed
                }
            })
            .count() as f64
            / m;
        let zero_variance = simulation.sd == 0.0;
        if zero_variance {
            warnings.push(Warning::new(
                WarningCode::ZeroVarianceDifference,
                format!("difference between timepoints {a} and {b} has zero variance"),
            ));
        }
        differences.push(DifferenceSummary {
            earlier: a,
            later: b,
            true_difference: observed,
            significant: !simulation.ci_contains_zero(),
            simulation,
            empirical_p,
            exceedance_proportion,
            zero_variance,
        });
    }

    Ok(BIComparison {
        timepoints,
        differences,
        homogeneity,
        arm_handling: cfg.arm_handling,
        sampling_mode: SamplingMode::PerArmJointSequences,
        replicates: cfg.replicates,
        seed: cfg.seed,
        warnings,
    })
}

/// Builds subjects whose per-timepoint guess tables equal `tables`, pairing
/// guesses across timepoints by independent random shuffles within each arm.
/// Each arm must have the same size at every timepoint.
pub fn dataset_from_marginals(tables: &[BlindingTable], seed: u64) -> Result<GuessSequenceDataset> {
    let first = tables.first().ok_or(Error::NoSubjects)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects = Vec::new();
    for arm in Arm::ALL {
        let size = first.arm_total(arm);
        if tables.iter().any(|t| t.arm_total(arm) != size) {
            return Err(Error::InvalidInput(format!(
                "arm {arm} changes size between timepoints"
            )));
        }
        let columns: Vec<Vec<Guess>> = tables
            .iter()
            .map(|t| {
                let mut col: Vec<Guess> = Guess::ALL
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g, t.get(arm, g) as usize))
                    .collect();
                col.shuffle(&mut rng);
                col
            })
            .collect();
        for i in 0..size as usize {
            subjects.push(SubjectRecord {
                subject_id: format!("{}-{}", arm.label(), i + 1),
                arm,
                guesses: columns.iter().map(|c| c[i]).collect(),
            });
        }
    }
    GuessSequenceDataset::new(subjects)
}
