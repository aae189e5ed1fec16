//! Line-delimited metrics records, one per epoch per split, append-only.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub answer_acc: f64,
    pub meta_bit_acc: f64,
    pub meta_exact_acc: f64,
    pub loss_total: f64,
    pub loss_answer: f64,
    pub loss_meta: f64,
    /// Wall-clock time; excluded from determinism comparisons.
    pub wall_secs: f64,
}

impl MetricsRecord {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("answer_acc", self.answer_acc),
            ("meta_bit_acc", self.meta_bit_acc),
            ("meta_exact_acc", self.meta_exact_acc),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Usage(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn append_record(path: &Path, record: &MetricsRecord) -> Result<()> {
    record.validate()?;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(record)
        .map_err(|e| Error::Usage(format!("metrics serialization: {e}")))?;
    writeln!(f, "{line}")?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                offset: 0,
                msg: format!("bad metrics line: {e}"),
            })
        })
        .collect()
}

/// Records with the wall-clock field zeroed, for determinism comparisons.
pub fn deterministic_view(records: &[MetricsRecord]) -> Vec<MetricsRecord> {
    records
        .iter()
        .map(|r| MetricsRecord { wall_secs: 0.0, ..r.clone() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let r1 = MetricsRecord {
            epoch: 0,
            split: "train".into(),
            answer_acc: 0.5,
            meta_bit_acc: 0.75,
            meta_exact_acc: 0.25,
            loss_total: 2.0,
            loss_answer: 1.5,
            loss_meta: 0.5,
            wall_secs: 1.25,
        };
        append_record(&path, &r1).unwrap();
        let mut r2 = r1.clone();
        r2.epoch = 1;
        r2.wall_secs = 9.0;
        append_record(&path, &r2).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], r1);
        assert_eq!(deterministic_view(&back)[1].wall_secs, 0.0);
    }

    #[test]
    fn accuracy_out_of_range_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = MetricsRecord {
            epoch: 0,
            split: "train".into(),
            answer_acc: 1.5,
            meta_bit_acc: 0.0,
            meta_exact_acc: 0.0,
            loss_total: 0.0,
            loss_answer: 0.0,
            loss_meta: 0.0,
            wall_secs: 0.0,
        };
        assert!(append_record(&dir.path().join("m.jsonl"), &r).is_err());
    }
}
