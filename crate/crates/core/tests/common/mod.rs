#![allow(dead_code)]

use blindsight_core::tables::{
    Arm, BlindingTable, Guess, GuessSequenceDataset, PairTable, SubjectRecord,
};

/// Pair counts (earlier guess, later guess) for the T and P arms of the
/// two-timepoint example trial, categories ordered TT, TP, TDK, PT, ….
pub const TWO_VISIT: [[u64; 9]; 2] = [[5, 5, 2, 5, 5, 2, 8, 9, 9], [5, 4, 3, 7, 4, 2, 5, 5, 15]];

/// Transition table of the same trial with arms pooled: rows later guess,
/// columns earlier guess.
pub const POOLED_TRANSITIONS: [[u64; 3]; 3] = [[10, 12, 13], [9, 9, 14], [5, 4, 24]];

/// Per-timepoint guess counts of the three-timepoint trial, rows T then P.
pub const THREE_VISIT: [([u64; 3], [u64; 3]); 3] = [
    ([41, 55, 130], [14, 99, 106]),
    ([51, 75, 100], [24, 109, 86]),
    ([61, 75, 90], [29, 114, 76]),
];

pub fn three_visit_tables() -> Vec<BlindingTable> {
    THREE_VISIT
        .iter()
        .map(|&(t, p)| BlindingTable::from_rows(t, p))
        .collect()
}

pub fn dataset_from_pair_rows(rows: [[u64; 9]; 2]) -> GuessSequenceDataset {
    let mut subjects = Vec::new();
    for (arm, row) in Arm::ALL.iter().zip(rows.iter()) {
        for (cat, &n) in row.iter().enumerate() {
            let (a, b) = PairTable::guesses(cat);
            for _ in 0..n {
                subjects.push(SubjectRecord {
                    subject_id: format!("{}{}", arm.label(), subjects.len() + 1),
                    arm: *arm,
                    guesses: vec![a, b],
                });
            }
        }
    }
    GuessSequenceDataset::new(subjects).unwrap()
}

pub fn two_visit_dataset() -> GuessSequenceDataset {
    dataset_from_pair_rows(TWO_VISIT)
}

pub fn guess(i: usize) -> Guess {
    Guess::ALL[i]
}
