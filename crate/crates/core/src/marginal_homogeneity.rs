//! Tests for a change in guessing between two timepoints: homogeneity of the
//! arms over the nine guess pairs, then marginal homogeneity of the 3×3
//! transition table (generalized McNemar / Stuart–Maxwell), chained over
//! consecutive timepoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stat_kernel::chi_square_sf;
use crate::tables::{
    chi_square_table_test, Arm, Guess, GuessSequenceDataset, PairTable, TestResult, TransitionTable,
};
use crate::warning::{Warning, WarningCode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// Later margin minus earlier margin for T, P, DK.
    pub d: [i64; 3],
    /// Off-diagonal averages n̄₁₂, n̄₁₃, n̄₂₃.
    pub nbar: [f64; 3],
    pub z0: f64,
    pub df: u32,
    pub p_value: f64,
    /// Holm-adjusted p-value, when requested by the sequential report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjusted_p_value: Option<f64>,
    pub alpha: f64,
    pub rejected: bool,
    /// All off-diagonal cells are zero.
    pub no_movement: bool,
    /// Only one pair of categories exchanged subjects; the statistic is then
    /// the two-category McNemar test with one degree of freedom.
    pub reduced_rank: bool,
    pub earlier_margins: [u64; 3],
    pub later_margins: [u64; 3],
    pub direction_note: String,
}

fn direction_note(earlier: &[u64; 3], later: &[u64; 3]) -> String {
    Guess::ALL
        .iter()
        .map(|g| {
            let (a, b) = (earlier[g.index()], later[g.index()]);
            format!("{} {a}->{b} ({:+})", g.label(), b as i64 - a as i64)
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Marginal-homogeneity test on a transition table (rows later, columns
/// earlier).
pub fn generalized_mcnemar(tt: &TransitionTable, alpha: f64) -> Result<McNemarResult> {
    crate::tables::check_alpha(alpha)?;
    let n = tt.counts.map(|r| r.map(|c| c as i64));
    let d = [
        (n[0][1] + n[0][2]) - (n[1][0] + n[2][0]),
        (n[1][0] + n[1][2]) - (n[0][1] + n[2][1]),
        (n[2][0] + n[2][1]) - (n[0][2] + n[1][2]),
    ];
    let avg = |i: usize, j: usize| (n[i][j] + n[j][i]) as f64 / 2.0;
    let nbar = [avg(0, 1), avg(0, 2), avg(1, 2)];
    let [n12, n13, n23] = nbar;

    let earlier_margins = tt.column_totals();
    let later_margins = tt.row_totals();
    let positive = nbar.iter().filter(|&&x| x > 0.0).count();

    let (z0, df, no_movement, reduced_rank) = match positive {
        0 => (0.0, 2, true, false),
        1 => {
            let (i, j) = [(0, 1), (0, 2), (1, 2)][nbar.iter().position(|&x| x > 0.0).unwrap()];
            let diff = (n[i][j] - n[j][i]) as f64;
            (diff * diff / (n[i][j] + n[j][i]) as f64, 1, false, true)
        }
        _ => {
            let [d1, d2, d3] = d.map(|x| x as f64);
            let numer = n23 * d1 * d1 + n13 * d2 * d2 + n12 * d3 * d3;
            let denom = 2.0 * (n12 * n23 + n12 * n13 + n13 * n23);
            (numer / denom, 2, false, false)
        }
    };
    let p_value = if no_movement {
        1.0
    } else {
        chi_square_sf(z0, df)
    };
    Ok(McNemarResult {
        d,
        nbar,
        z0,
        df,
        p_value,
        adjusted_p_value: None,
        alpha,
        rejected: p_value < alpha,
        no_movement,
        reduced_rank,
        earlier_margins,
        later_margins,
        direction_note: direction_note(&earlier_margins, &later_margins),
    })
}

/// Chi-square homogeneity of the two arms over the guess-pair categories.
///
/// Pair categories nobody chose are dropped first, so the test has 8 degrees
/// of freedom only when all nine pairs occur.
pub fn row_homogeneity(pair: &PairTable, alpha: f64) -> Result<TestResult> {
    for arm in Arm::ALL {
        if pair.arm_total(arm) == 0 {
            return Err(Error::EmptyArm(arm.label().into()));
        }
    }
    let present: Vec<usize> = (0..9)
        .filter(|&c| pair.counts[0][c] + pair.counts[1][c] > 0)
        .collect();
    let rows: Vec<Vec<u64>> = pair
        .counts
        .iter()
        .map(|row| present.iter().map(|&c| row[c]).collect())
        .collect();
    if present.len() < 2 {
        return Err(Error::DegenerateMargin(
            "fewer than two guess pairs observed".into(),
        ));
    }
    chi_square_table_test(&rows, false, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeArmsPolicy {
    /// Merge when the row-homogeneity test does not reject.
    #[default]
    IfHomogeneous,
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum McNemarOutcome {
    Merged {
        result: McNemarResult,
    },
    PerArm {
        test: McNemarResult,
        placebo: McNemarResult,
    },
}

impl McNemarOutcome {
    pub fn results(&self) -> Vec<&McNemarResult> {
        match self {
            McNemarOutcome::Merged { result } => vec![result],
            McNemarOutcome::PerArm { test, placebo } => vec![test, placebo],
        }
    }

    fn results_mut(&mut self) -> Vec<&mut McNemarResult> {
        match self {
            McNemarOutcome::Merged { result } => vec![result],
            McNemarOutcome::PerArm { test, placebo } => vec![test, placebo],
        }
    }

    pub fn rejected(&self) -> bool {
        self.results().iter().any(|r| r.rejected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialStep {
    pub earlier: usize,
    pub later: usize,
    pub row_homogeneity: Option<TestResult>,
    pub outcome: McNemarOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialReport {
    pub alpha: f64,
    pub policy: MergeArmsPolicy,
    pub holm: bool,
    pub steps: Vec<SequentialStep>,
    /// Later timepoint of every step whose marginal homogeneity was rejected.
    pub flagged_timepoints: Vec<usize>,
    pub warnings: Vec<Warning>,
}

/// Generalized McNemar test for every consecutive pair of timepoints.
pub fn sequential_mcnemar(
    dataset: &GuessSequenceDataset,
    policy: MergeArmsPolicy,
    alpha: f64,
    holm: bool,
) -> Result<SequentialReport> {
    let t_max = dataset.timepoint_count();
    if t_max < 2 {
        return Err(Error::TooFewTimepoints {
            analysis: "mcnemar",
            needed: 2,
            found: t_max,
        });
    }
    let mut warnings = Vec::new();
    let mut steps = Vec::with_capacity(t_max - 1);
    for earlier in 1..t_max {
        let later = earlier + 1;
        let pair = dataset.pair_table(earlier, later)?;
        let homogeneity = match row_homogeneity(&pair, alpha) {
            Ok(r) => {
                if r.has_small_expected() {
                    warnings.push(Warning::new(
                        WarningCode::SmallExpectedCount,
                        format!("row homogeneity {earlier}->{later}: expected count below 5"),
                    ));
                }
                Some(r)
            }
            Err(e @ (Error::DegenerateMargin(_) | Error::EmptyArm(_))) => {
                warnings.push(Warning::new(
                    WarningCode::RowHomogeneityUnavailable,
                    format!("row homogeneity {earlier}->{later}: {e}"),
                ));
                None
            }
            Err(e) => return Err(e),
        };
        let merge = match policy {
            MergeArmsPolicy::Always => true,
            MergeArmsPolicy::Never => false,
            MergeArmsPolicy::IfHomogeneous => homogeneity.as_ref().is_none_or(|r| !r.rejected),
        };
        let outcome = if merge {
            McNemarOutcome::Merged {
                result: generalized_mcnemar(&pair.merged_transition(), alpha)?,
            }
        } else {
            McNemarOutcome::PerArm {
                test: generalized_mcnemar(&pair.transition(Arm::Test), alpha)?,
                placebo: generalized_mcnemar(&pair.transition(Arm::Placebo), alpha)?,
            }
        };
        for r in outcome.results() {
            if r.no_movement {
                warnings.push(Warning::new(
                    WarningCode::NoMovement,
                    format!("McNemar {earlier}->{later}: no subject changed guess"),
                ));
            } else if r.reduced_rank {
                warnings.push(Warning::new(
                    WarningCode::ReducedRankMcNemar,
                    format!("McNemar {earlier}->{later}: only one category pair exchanged subjects; df = 1"),
                ));
            }
        }
        steps.push(SequentialStep {
            earlier,
            later,
            row_homogeneity: homogeneity,
            outcome,
        });
    }

    if holm {
        apply_holm(&mut steps);
    }
    let flagged_timepoints = steps
        .iter()
        .filter(|s| s.outcome.rejected())
        .map(|s| s.later)
        .collect();
    Ok(SequentialReport {
        alpha,
        policy,
        holm,
        steps,
        flagged_timepoints,
        warnings,
    })
}

/// Holm step-down adjustment across every McNemar p-value in the report.
fn apply_holm(steps: &mut [SequentialStep]) {
    let mut all: Vec<&mut McNemarResult> = steps
        .iter_mut()
        .flat_map(|s| s.outcome.results_mut())
        .collect();
    let m = all.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| all[a].p_value.total_cmp(&all[b].p_value).then(a.cmp(&b)));
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        let adjusted = ((m - rank) as f64 * all[i].p_value).min(1.0);
        running = running.max(adjusted);
        let r = &mut all[i];
        r.adjusted_p_value = Some(running);
        r.rejected = running < r.alpha;
    }
}
