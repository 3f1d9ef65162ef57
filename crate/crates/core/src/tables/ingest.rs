//! Readers and writers for the two input formats: long subject-level CSV
//! (`subject_id,arm,timepoint,guess`) and count-level JSON.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Arm, Guess, GuessSequenceDataset, SubjectRecord};
use crate::error::{Error, Result};

/// Column names of the subject-level CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub subject_id: String,
    pub arm: String,
    pub timepoint: String,
    pub guess: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            subject_id: "subject_id".into(),
            arm: "arm".into(),
            timepoint: "timepoint".into(),
            guess: "guess".into(),
        }
    }
}

struct Pending {
    id: String,
    arm: Arm,
    by_time: BTreeMap<usize, Guess>,
}

/// Reads a subject-level CSV. Fails on the first problem found.
pub fn ingest_subjects<R: Read>(reader: R, schema: &Schema) -> Result<GuessSequenceDataset> {
    let mut problems = Vec::new();
    match parse(reader, schema, false, &mut problems)? {
        Some(ds) => Ok(ds),
        None => Err(problems.remove(0)),
    }
}

/// Scans a subject-level CSV and returns every problem found, without
/// stopping at the first one. An empty list means [`ingest_subjects`] would
/// succeed.
pub fn check_subjects<R: Read>(reader: R, schema: &Schema) -> Vec<Error> {
    let mut problems = Vec::new();
    if let Err(e) = parse(reader, schema, true, &mut problems) {
        problems.push(e);
    }
    problems
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("missing column {name:?}"),
        })
}

/// Returns `Ok(None)` when problems were recorded.
fn parse<R: Read>(
    reader: R,
    schema: &Schema,
    collect_all: bool,
    problems: &mut Vec<Error>,
) -> Result<Option<GuessSequenceDataset>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, &schema.subject_id)?;
    let arm_col = column(&headers, &schema.arm)?;
    let time_col = column(&headers, &schema.timepoint)?;
    let guess_col = column(&headers, &schema.guess)?;

    let mut order: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");
        let mut row_problem = |message: String| Error::Parse { row, message };

        let id = field(id_col).to_string();
        if id.is_empty() {
            problems.push(row_problem("empty subject_id".into()));
        }
        let arm = field(arm_col).parse::<Arm>().map_err(&mut row_problem);
        let guess = field(guess_col).parse::<Guess>().map_err(&mut row_problem);
        let time = match field(time_col).parse::<usize>() {
            Ok(t) if t >= 1 => Ok(t),
            _ => Err(row_problem(format!(
                "timepoint must be a positive integer, got {:?}",
                field(time_col)
            ))),
        };
        let (arm, guess, time) = match (arm, guess, time) {
            (Ok(a), Ok(g), Ok(t)) if !id.is_empty() => (a, g, t),
            (a, g, t) => {
                problems.extend([a.err(), g.err(), t.err()].into_iter().flatten());
                if !collect_all {
                    return Ok(None);
                }
                continue;
            }
        };

        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(Pending {
                id: id.clone(),
                arm,
                by_time: BTreeMap::new(),
            });
            order.len() - 1
        });
        let pending = &mut order[slot];
        if pending.arm != arm {
            problems.push(Error::ConflictingArm { row, subject: id });
        } else if pending.by_time.insert(time, guess).is_some() {
            problems.push(Error::DuplicateTimepoint {
                row,
                subject: id,
                timepoint: time,
            });
        }
        if !problems.is_empty() && !collect_all {
            return Ok(None);
        }
    }

    if order.is_empty() {
        problems.push(Error::NoSubjects);
        return Ok(None);
    }
    let timepoints = order
        .iter()
        .flat_map(|p| p.by_time.keys().copied())
        .max()
        .unwrap_or(0);
    let mut subjects = Vec::with_capacity(order.len());
    for p in order {
        let found: Vec<usize> = p.by_time.keys().copied().collect();
        if found.len() != timepoints || found.last() != Some(&timepoints) {
            problems.push(Error::RaggedTimepoints {
                subject: p.id,
                expected: timepoints,
                found,
            });
            if !collect_all {
                return Ok(None);
            }
            continue;
        }
        subjects.push(SubjectRecord {
            subject_id: p.id,
            arm: p.arm,
            guesses: p.by_time.into_values().collect(),
        });
    }
    if !problems.is_empty() {
        return Ok(None);
    }
    GuessSequenceDataset::new(subjects).map(Some)
}

/// Writes a dataset in the long CSV layout, one row per subject and timepoint.
pub fn write_subjects_csv<W: Write>(dataset: &GuessSequenceDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "arm", "timepoint", "guess"])?;
    for s in dataset.subjects() {
        for (t, g) in s.guesses.iter().enumerate() {
            w.write_record([
                s.subject_id.as_str(),
                s.arm.label(),
                &(t + 1).to_string(),
                g.label(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Count-level input: per-arm counts of guess sequences keyed like `"T|DK"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    pub arms: BTreeMap<String, BTreeMap<String, u64>>,
    pub timepoints: usize,
}

impl CountTable {
    pub fn from_dataset(dataset: &GuessSequenceDataset) -> Self {
        let mut arms = BTreeMap::new();
        for arm in Arm::ALL {
            let counts = dataset
                .sequence_counts(arm)
                .into_iter()
                .map(|(seq, n)| (sequence_key(&seq), n))
                .collect();
            arms.insert(arm.label().to_string(), counts);
        }
        Self {
            arms,
            timepoints: dataset.timepoint_count(),
        }
    }

    /// Expands the counts into synthetic subjects named `T-1`, `T-2`, ….
    pub fn to_dataset(&self) -> Result<GuessSequenceDataset> {
        if self.timepoints == 0 {
            return Err(Error::InvalidInput("timepoints must be positive".into()));
        }
        let mut subjects = Vec::new();
        for (arm_key, counts) in &self.arms {
            let arm: Arm = arm_key.parse().map_err(Error::InvalidInput)?;
            let mut serial = 0usize;
            for (key, &n) in counts {
                let guesses = key
                    .split('|')
                    .map(|tok| tok.parse::<Guess>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::InvalidInput(format!("key {key:?}: {e}")))?;
                if guesses.len() != self.timepoints {
                    return Err(Error::InvalidInput(format!(
                        "key {key:?} has {} guesses, expected {}",
                        guesses.len(),
                        self.timepoints
                    )));
                }
                for _ in 0..n {
                    serial += 1;
                    subjects.push(SubjectRecord {
                        subject_id: format!("{}-{serial}", arm.label()),
                        arm,
                        guesses: guesses.clone(),
                    });
                }
            }
        }
        GuessSequenceDataset::new(subjects)
    }
}

fn sequence_key(seq: &[Guess]) -> String {
    seq.iter().map(|g| g.label()).collect::<Vec<_>>().join("|")
}

pub fn ingest_count_json<R: Read>(reader: R) -> Result<GuessSequenceDataset> {
    let table: CountTable = serde_json::from_reader(reader)?;
    table.to_dataset()
}

pub fn write_count_json<W: Write>(dataset: &GuessSequenceDataset, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, &CountTable::from_dataset(dataset))?;
    Ok(())
}
