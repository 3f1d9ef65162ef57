//! Questionnaire data model and the contingency tables derived from it.
//!
//! Everything starts from a [`GuessSequenceDataset`]: one record per subject
//! with the arm and the ordered guesses. Marginal 2×3 tables, 2×9 pair
//! tables and 3×3 transition tables are folds of that dataset.

mod chi_square;
mod ingest;

pub(crate) use chi_square::check_alpha;
pub use chi_square::{chi_square_table_test, TestResult};
pub use ingest::{
    check_subjects, ingest_count_json, ingest_subjects, write_count_json, write_subjects_csv,
    CountTable, Schema,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warning::{Warning, WarningCode};

/// A subject's answer to "which treatment do you think you received?".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Guess {
    #[serde(rename = "T")]
    Test,
    #[serde(rename = "P")]
    Placebo,
    #[serde(rename = "DK")]
    DontKnow,
}

impl Guess {
    pub const ALL: [Guess; 3] = [Guess::Test, Guess::Placebo, Guess::DontKnow];

    pub fn index(self) -> usize {
        match self {
            Guess::Test => 0,
            Guess::Placebo => 1,
            Guess::DontKnow => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Guess::Test => "T",
            Guess::Placebo => "P",
            Guess::DontKnow => "DK",
        }
    }

    /// The same answer with T and P exchanged.
    pub fn swapped(self) -> Guess {
        match self {
            Guess::Test => Guess::Placebo,
            Guess::Placebo => Guess::Test,
            Guess::DontKnow => Guess::DontKnow,
        }
    }
}

impl fmt::Display for Guess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Guess {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T" | "TEST" => Ok(Guess::Test),
            "P" | "PLACEBO" => Ok(Guess::Placebo),
            "DK" | "DONTKNOW" => Ok(Guess::DontKnow),
            other => Err(format!("unknown guess token {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "T")]
    Test,
    #[serde(rename = "P")]
    Placebo,
}

impl Arm {
    pub const ALL: [Arm; 2] = [Arm::Test, Arm::Placebo];

    pub fn index(self) -> usize {
        match self {
            Arm::Test => 0,
            Arm::Placebo => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Arm::Test => "T",
            Arm::Placebo => "P",
        }
    }

    /// The guess that is correct for subjects in this arm.
    pub fn correct_guess(self) -> Guess {
        match self {
            Arm::Test => Guess::Test,
            Arm::Placebo => Guess::Placebo,
        }
    }

    pub fn swapped(self) -> Arm {
        match self {
            Arm::Test => Arm::Placebo,
            Arm::Placebo => Arm::Test,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T" | "TEST" => Ok(Arm::Test),
            "P" | "PLACEBO" => Ok(Arm::Placebo),
            other => Err(format!("unknown arm token {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub arm: Arm,
    /// One guess per timepoint, timepoint 1 first.
    pub guesses: Vec<Guess>,
}

/// All subjects of a trial with their guesses at timepoints `1..=T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuessSequenceDataset {
    subjects: Vec<SubjectRecord>,
    timepoint_count: usize,
}

impl GuessSequenceDataset {
    pub fn new(subjects: Vec<SubjectRecord>) -> Result<Self> {
        let first = subjects.first().ok_or(Error::NoSubjects)?;
        let timepoint_count = first.guesses.len();
        if timepoint_count == 0 {
            return Err(Error::InvalidInput(format!(
                "subject {} has no guesses",
                first.subject_id
            )));
        }
        for s in &subjects {
            if s.guesses.len() != timepoint_count {
                return Err(Error::RaggedTimepoints {
                    subject: s.subject_id.clone(),
                    expected: timepoint_count,
                    found: (1..=s.guesses.len()).collect(),
                });
            }
        }
        Ok(Self {
            subjects,
            timepoint_count,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn timepoint_count(&self) -> usize {
        self.timepoint_count
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        self.subjects.iter().filter(|s| s.arm == arm).count()
    }

    pub fn warnings(&self) -> Vec<Warning> {
        Arm::ALL
            .iter()
            .filter(|&&arm| self.arm_size(arm) == 0)
            .map(|arm| Warning::new(WarningCode::ArmEmpty, format!("arm {arm} has no subjects")))
            .collect()
    }

    fn check_timepoint(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timepoint_count {
            return Err(Error::TimepointOutOfRange {
                timepoint: t,
                max: self.timepoint_count,
            });
        }
        Ok(())
    }

    /// Arm × guess counts at timepoint `t` (1-based).
    pub fn marginal_table(&self, t: usize) -> Result<BlindingTable> {
        self.check_timepoint(t)?;
        let mut counts = [[0u64; 3]; 2];
        for s in &self.subjects {
            counts[s.arm.index()][s.guesses[t - 1].index()] += 1;
        }
        Ok(BlindingTable::new(counts))
    }

    /// Arm × (guess at `earlier`, guess at `later`) counts.
    pub fn pair_table(&self, earlier: usize, later: usize) -> Result<PairTable> {
        self.check_timepoint(earlier)?;
        self.check_timepoint(later)?;
        if earlier >= later {
            return Err(Error::InvalidPair { earlier, later });
        }
        let mut counts = [[0u64; 9]; 2];
        for s in &self.subjects {
            let g_s = s.guesses[earlier - 1];
            let g_t = s.guesses[later - 1];
            counts[s.arm.index()][PairTable::category(g_s, g_t)] += 1;
        }
        Ok(PairTable {
            earlier,
            later,
            counts,
        })
    }

    /// Per-arm counts of complete guess sequences.
    pub fn sequence_counts(&self, arm: Arm) -> BTreeMap<Vec<Guess>, u64> {
        let mut map = BTreeMap::new();
        for s in self.subjects.iter().filter(|s| s.arm == arm) {
            *map.entry(s.guesses.clone()).or_insert(0) += 1;
        }
        map
    }

    /// Per-timepoint `(DK count, total)` with both arms pooled.
    pub fn dk_series(&self) -> Vec<(u64, u64)> {
        (1..=self.timepoint_count)
            .map(|t| {
                let table = self.marginal_table(t).expect("timepoint in range");
                (table.guess_total(Guess::DontKnow), table.total())
            })
            .collect()
    }
}

/// 2×3 arm × guess table at a single timepoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlindingTable {
    /// `counts[arm][guess]`, arms ordered T, P and guesses T, P, DK.
    pub counts: [[u64; 3]; 2],
}

impl BlindingTable {
    pub fn new(counts: [[u64; 3]; 2]) -> Self {
        Self { counts }
    }

    /// Table from the T-arm row and P-arm row, each ordered T, P, DK.
    pub fn from_rows(test: [u64; 3], placebo: [u64; 3]) -> Self {
        Self {
            counts: [test, placebo],
        }
    }

    pub fn get(&self, arm: Arm, guess: Guess) -> u64 {
        self.counts[arm.index()][guess.index()]
    }

    pub fn arm_total(&self, arm: Arm) -> u64 {
        self.counts[arm.index()].iter().sum()
    }

    pub fn guess_total(&self, guess: Guess) -> u64 {
        self.counts.iter().map(|row| row[guess.index()]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.iter().map(|r| r.to_vec()).collect()
    }

    /// Exchange the arms and the T/P guess columns together.
    pub fn relabeled(&self) -> Self {
        let mut out = [[0u64; 3]; 2];
        for arm in Arm::ALL {
            for guess in Guess::ALL {
                out[arm.swapped().index()][guess.swapped().index()] = self.get(arm, guess);
            }
        }
        Self { counts: out }
    }
}

/// Arm × guess-pair counts for two timepoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTable {
    pub earlier: usize,
    pub later: usize,
    /// `counts[arm][category]`, categories in [`PairTable::CATEGORY_LABELS`] order.
    pub counts: [[u64; 9]; 2],
}

impl PairTable {
    /// Guess at the earlier timepoint first, then the later one.
    pub const CATEGORY_LABELS: [&'static str; 9] =
        ["TT", "TP", "TDK", "PT", "PP", "PDK", "DKT", "DKP", "DKDK"];

    pub fn category(earlier: Guess, later: Guess) -> usize {
        3 * earlier.index() + later.index()
    }

    /// Inverse of [`PairTable::category`].
    pub fn guesses(category: usize) -> (Guess, Guess) {
        (Guess::ALL[category / 3], Guess::ALL[category % 3])
    }

    pub fn arm_total(&self, arm: Arm) -> u64 {
        self.counts[arm.index()].iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.iter().map(|r| r.to_vec()).collect()
    }

    /// Marginal 2×3 table at the earlier (`later == false`) or later timepoint.
    pub fn marginal(&self, later: bool) -> BlindingTable {
        let mut counts = [[0u64; 3]; 2];
        for (arm, row) in self.counts.iter().enumerate() {
            for (cat, &n) in row.iter().enumerate() {
                let (g_s, g_t) = Self::guesses(cat);
                let g = if later { g_t } else { g_s };
                counts[arm][g.index()] += n;
            }
        }
        BlindingTable::new(counts)
    }

    pub fn transition(&self, arm: Arm) -> TransitionTable {
        TransitionTable::from_pair_row(&self.counts[arm.index()])
    }

    pub fn merged_transition(&self) -> TransitionTable {
        let mut row = [0u64; 9];
        for (cat, cell) in row.iter_mut().enumerate() {
            *cell = self.counts[0][cat] + self.counts[1][cat];
        }
        TransitionTable::from_pair_row(&row)
    }

    /// Fold into 3×3 transition tables, merged across arms or one per arm.
    pub fn transition_table(&self, merge_arms: bool) -> Transitions {
        if merge_arms {
            Transitions::Merged(self.merged_transition())
        } else {
            Transitions::PerArm {
                test: self.transition(Arm::Test),
                placebo: self.transition(Arm::Placebo),
            }
        }
    }
}

/// 3×3 table of guesses at two timepoints: rows are the later guess, columns
/// the earlier guess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub counts: [[u64; 3]; 3],
}

impl TransitionTable {
    pub fn new(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    fn from_pair_row(row: &[u64; 9]) -> Self {
        let mut counts = [[0u64; 3]; 3];
        for (cat, &n) in row.iter().enumerate() {
            let (g_s, g_t) = PairTable::guesses(cat);
            counts[g_t.index()][g_s.index()] += n;
        }
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Totals of each row, i.e. guesses at the later timepoint.
    pub fn row_totals(&self) -> [u64; 3] {
        let mut out = [0; 3];
        for (i, row) in self.counts.iter().enumerate() {
            out[i] = row.iter().sum();
        }
        out
    }

    /// Totals of each column, i.e. guesses at the earlier timepoint.
    pub fn column_totals(&self) -> [u64; 3] {
        let mut out = [0; 3];
        for row in &self.counts {
            for (j, &n) in row.iter().enumerate() {
                out[j] += n;
            }
        }
        out
    }

    pub fn transposed(&self) -> Self {
        Self {
            counts: std::array::from_fn(|i| std::array::from_fn(|j| self.counts[j][i])),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            counts: std::array::from_fn(|i| {
                std::array::from_fn(|j| self.counts[i][j] + other.counts[i][j])
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Transitions {
    Merged(TransitionTable),
    PerArm {
        test: TransitionTable,
        placebo: TransitionTable,
    },
}
