//! James blinding index, DK proportions, and the split of unblinding into a
//! design-attributable and an experience-attributable part.
//!
//! The index combines the share of "don't know" answers with a
//! chance-corrected disagreement among the subjects who did guess:
//!
//! ```text
//! BI = (1 + p_dk + (1 - p_dk) * kappa_d) / 2
//! kappa_d = (p_do - p_de) / p_de
//! ```
//!
//! where `p_do` is the observed share of wrong guesses among guessers and
//! `p_de` the share expected if guess and arm were independent. Weighting
//! wrong guesses by 0.5 scales `p_do` and `p_de` alike, so the unweighted
//! ratio is used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tables::{Arm, BlindingTable, Guess};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BIEstimate {
    pub bi: f64,
    pub p_dk: f64,
    pub kappa_d: f64,
    pub n: u64,
    /// Set when nobody guessed, or the guessers leave the chance-expected
    /// disagreement at zero; `kappa_d` is then taken as 0.
    pub degenerate: bool,
}

/// Index on real-valued cells (counts or probabilities), ordered as in
/// [`BlindingTable::counts`]. Returns `(bi, p_dk, kappa_d, degenerate)`.
pub(crate) fn bi_from_cells(cells: &[[f64; 3]; 2]) -> (f64, f64, f64, bool) {
    let [t, p] = cells;
    let total = t.iter().sum::<f64>() + p.iter().sum::<f64>();
    let p_dk = (t[2] + p[2]) / total;

    let row_t = t[0] + t[1];
    let row_p = p[0] + p[1];
    let guessers = row_t + row_p;
    let col_t = t[0] + p[0];
    let col_p = t[1] + p[1];

    let (kappa_d, degenerate) = if guessers <= 0.0 {
        (0.0, true)
    } else {
        let observed = (t[1] + p[0]) / guessers;
        let expected = (row_t * col_p + row_p * col_t) / (guessers * guessers);
        if expected <= 0.0 {
            (0.0, true)
        } else {
            ((observed - expected) / expected, false)
        }
    };
    let bi = ((1.0 + p_dk + (1.0 - p_dk) * kappa_d) / 2.0).clamp(0.0, 1.0);
    (bi, p_dk, kappa_d, degenerate)
}

pub fn james_bi(table: &BlindingTable) -> Result<BIEstimate> {
    let n = table.total();
    if n == 0 {
        return Err(Error::InvalidInput(
            "blinding index of an empty table".into(),
        ));
    }
    let cells = table.counts.map(|row| row.map(|c| c as f64));
    let (bi, p_dk, kappa_d, degenerate) = bi_from_cells(&cells);
    Ok(BIEstimate {
        bi,
        p_dk,
        kappa_d,
        n,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DkProportion {
    Overall(f64),
    PerArm { test: f64, placebo: f64 },
}

pub fn dk_proportion(table: &BlindingTable, per_arm: bool) -> Result<DkProportion> {
    let share = |arm: Arm| -> Result<f64> {
        let total = table.arm_total(arm);
        if total == 0 {
            return Err(Error::EmptyArm(arm.label().into()));
        }
        Ok(table.get(arm, Guess::DontKnow) as f64 / total as f64)
    };
    if per_arm {
        Ok(DkProportion::PerArm {
            test: share(Arm::Test)?,
            placebo: share(Arm::Placebo)?,
        })
    } else {
        let total = table.total();
        if total == 0 {
            return Err(Error::InvalidInput(
                "DK proportion of an empty table".into(),
            ));
        }
        Ok(DkProportion::Overall(
            table.guess_total(Guess::DontKnow) as f64 / total as f64,
        ))
    }
}

/// Unblinding present at the baseline assessment (`primary_extent`) and the
/// later drop in DK share relative to it (`secondary_extent`, signed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Apportionment {
    /// 1-based.
    pub baseline_timepoint: usize,
    pub primary_extent: f64,
    pub secondary_extent: Vec<f64>,
}

/// `baseline` is 1-based.
pub fn apportion_unblinding(dk_series: &[f64], baseline: usize) -> Result<Apportionment> {
    if baseline == 0 || baseline > dk_series.len() {
        return Err(Error::TimepointOutOfRange {
            timepoint: baseline,
            max: dk_series.len(),
        });
    }
    if let Some(p) = dk_series.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!(
            "DK proportion {p} outside [0, 1]"
        )));
    }
    let base = dk_series[baseline - 1];
    Ok(Apportionment {
        baseline_timepoint: baseline,
        primary_extent: 1.0 - base,
        secondary_extent: dk_series.iter().map(|p| base - p).collect(),
    })
}
