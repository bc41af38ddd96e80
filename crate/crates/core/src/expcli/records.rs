use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One NMSE measurement: a model trained through `trained_up_to`, tested on
/// `evaluated_on`. `K` is empty for strategies without replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub strategy: String,
    pub trained_up_to: String,
    pub evaluated_on: String,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub nmse_db: f64,
    pub seed: u64,
    pub wall_seconds: Option<f64>,
}

/// Persistent memory held by a strategy after a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub strategy: String,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub gamma: f64,
    pub step: usize,
    pub scenario: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub strategy: String,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub gamma: f64,
    pub step: usize,
    pub scenario: String,
    pub wall_seconds: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// `bytes / 2^20` with three decimals, e.g. `16384000 -> "15.625 MiB"`.
pub fn format_mib(bytes: u64) -> String {
    format!("{:.3} MiB", bytes as f64 / (1u64 << 20) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mib_formatting() {
        assert_eq!(format_mib(16_384_000), "15.625 MiB");
        assert_eq!(format_mib(81_920_000), "78.125 MiB");
        assert_eq!(format_mib(3_724_544), "3.552 MiB");
        assert_eq!(format_mib(0), "0.000 MiB");
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![
            ResultRecord {
                strategy: "Proposed".into(),
                trained_up_to: "B".into(),
                evaluated_on: "A".into(),
                gamma: 1.0 / 128.0,
                k: Some(250),
                nmse_db: -7.123456789,
                seed: 3,
                wall_seconds: None,
            },
            ResultRecord {
                strategy: "DT".into(),
                trained_up_to: "A".into(),
                evaluated_on: "A".into(),
                gamma: 0.0625,
                k: None,
                nmse_db: -300.0,
                seed: 3,
                wall_seconds: Some(1.5),
            },
        ];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "strategy,trained_up_to,evaluated_on,gamma,K,nmse_db,seed,wall_seconds\n"
        ));
        assert!(text.contains("DT,A,A,0.0625,,-300.0,3,1.5"));
        assert_eq!(read_csv::<ResultRecord>(&path).unwrap(), rows);
    }
}
