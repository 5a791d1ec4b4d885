//! Mechanical-test and resistance series: ingestion, clock alignment and the
//! tabular layout used for training and replay.
//!
//! Strain is dimensionless everywhere in this module; percent columns are
//! converted on ingest.

mod mechanical;
mod offset;
pub mod synthetic;
mod sync;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mechanical::{parse_mechanical_csv, percent_to_fraction};
pub use offset::{estimate_offset, estimate_offset_detailed, OffsetEstimate};
pub use sync::{sampling_interval, synchronize};
pub use table::{
    format_table_row, parse_resistance_csv, read_table1_csv, table1_header, write_table1_csv,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanicalSample {
    /// Seconds on the testing-machine clock.
    pub time: f64,
    pub strain: f64,
    /// MPa.
    pub stress: Option<f64>,
    /// N.
    pub force: Option<f64>,
    /// mm.
    pub displacement: Option<f64>,
}

impl MechanicalSample {
    pub fn new(time: f64, strain: f64) -> Self {
        Self {
            time,
            strain,
            stress: None,
            force: None,
            displacement: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResistanceSample {
    /// Seconds on the resistance-logger clock.
    pub t: f64,
    pub resistances: Vec<f64>,
}

/// One synchronised row: `time`/`strain` from the mechanical clock, `t` and
/// the resistances from the logger clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedRecord {
    pub time: f64,
    pub strain: f64,
    pub t: f64,
    pub resistances: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("the shifted series do not overlap")]
    NoOverlap,
    #[error("series lack variation or samples for correlation")]
    InsufficientVariation,
    #[error("need at least 5 records, got {0}")]
    TooFewRecords(usize),
    #[error("train fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("{0} series is empty")]
    EmptySeries(&'static str),
    #[error("{series} series is not time-sorted at index {index}")]
    Unsorted { series: &'static str, index: usize },
    #[error("inconsistent channel count: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
}

/// Chronological split: the first `ceil(n * train_fraction)` records train,
/// the rest test. No shuffling.
pub fn split_chronological<T: Clone>(
    records: &[T],
    train_fraction: f64,
) -> Result<(Vec<T>, Vec<T>), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let n = records.len();
    if n < 5 {
        return Err(DatasetError::TooFewRecords(n));
    }
    // The small slack keeps e.g. 10 * 0.7 = 7.000000000000001 from rounding up.
    let cut = ((n as f64 * train_fraction) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let (train, test) = records.split_at(cut);
    Ok((train.to_vec(), test.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        let v: Vec<u32> = (0..10).collect();
        let (a, b) = split_chronological(&v, 0.8).unwrap();
        assert_eq!(a, (0..8).collect::<Vec<_>>());
        assert_eq!(b, vec![8, 9]);
        let (a, b) = split_chronological(&v, 0.7).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        let v: Vec<u32> = (0..5).collect();
        let (a, b) = split_chronological(&v, 0.5).unwrap();
        assert_eq!((a, b), (vec![0, 1, 2], vec![3, 4]));
        assert_eq!(
            split_chronological(&[1, 2, 3], 0.5),
            Err(DatasetError::TooFewRecords(3))
        );
        assert_eq!(split_chronological(&v, 1.0), Err(DatasetError::InvalidFraction(1.0)));
        assert_eq!(split_chronological(&v, 0.0), Err(DatasetError::InvalidFraction(0.0)));
    }
}
