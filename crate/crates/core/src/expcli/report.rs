use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::records::{format_mib, MemoryRecord, ResultRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableShape {
    /// Proposed method: rows (gamma, K, after training on), one column per scenario.
    Table1,
    /// Memory held by each strategy when it meets the last scenario.
    Table2,
    /// Every strategy after the whole sequence, one column per scenario.
    Fig6,
}

impl TableShape {
    pub const ALL: [TableShape; 3] = [TableShape::Table1, TableShape::Table2, TableShape::Fig6];

    pub fn name(self) -> &'static str {
        match self {
            TableShape::Table1 => "table1",
            TableShape::Table2 => "table2",
            TableShape::Fig6 => "fig6",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub shape: TableShape,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::format("table", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Space-aligned columns.
    pub fn to_text(&self) -> String {
        let n = self.header.len();
        let mut width = vec![0; n];
        for row in std::iter::once(&self.header).chain(&self.rows) {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |row: &[String]| {
            let cells: Vec<String> = row
                .iter()
                .zip(&width)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect();
            cells.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.header);
        for r in &self.rows {
            out += &line(r);
        }
        out
    }

    /// Writes `<name>.csv` and `<name>.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{}.csv", self.shape.name()));
        let txt_path = dir.join(format!("{}.txt", self.shape.name()));
        fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        fs::write(&txt_path, self.to_text()).map_err(|e| Error::io(&txt_path, e))?;
        Ok(vec![csv_path, txt_path])
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `1/16` for reciprocal integers, the plain decimal otherwise.
pub fn format_gamma(g: f64) -> String {
    let inv = 1.0 / g;
    if (inv - inv.round()).abs() < 1e-9 && inv >= 1.0 {
        format!("1/{}", inv.round() as u64)
    } else {
        format!("{g}")
    }
}

fn format_k(k: Option<usize>) -> String {
    k.map_or_else(|| "-".into(), |k| k.to_string())
}

pub fn strategy_name(label: &str, k: Option<usize>) -> String {
    match k {
        Some(k) => format!("{label} (K={k})"),
        None => label.to_string(),
    }
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

/// Scenario ids in the order they were first trained on.
pub fn scenario_order(records: &[ResultRecord]) -> Vec<String> {
    let mut ids = Vec::new();
    // evaluation targets first: a sweep file only has the last training stage
    for r in records {
        push_unique(&mut ids, r.evaluated_on.clone());
    }
    for r in records {
        push_unique(&mut ids, r.trained_up_to.clone());
    }
    ids
}

fn gamma_order(records: &[ResultRecord]) -> Vec<u64> {
    let mut g = Vec::new();
    for r in records {
        push_unique(&mut g, r.gamma.to_bits());
    }
    g
}

type Key = (String, Option<usize>, u64, String, String);

/// Median NMSE over seeds for every (strategy, K, gamma, trained, evaluated).
pub fn medians(records: &[ResultRecord]) -> BTreeMap<Key, f64> {
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((
                r.strategy.clone(),
                r.k,
                r.gamma.to_bits(),
                r.trained_up_to.clone(),
                r.evaluated_on.clone(),
            ))
            .or_default()
            .push(r.nmse_db);
    }
    groups.into_iter().map(|(k, v)| (k, median(&v))).collect()
}

fn cell(v: Option<&f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

pub fn emit_tables(
    records: &[ResultRecord],
    memory: &[MemoryRecord],
    shape: TableShape,
) -> Result<Table> {
    match shape {
        TableShape::Table1 => table1(records),
        TableShape::Table2 => table2(memory),
        TableShape::Fig6 => fig6(records),
    }
}

fn table1(records: &[ResultRecord]) -> Result<Table> {
    if records.is_empty() {
        return Err(Error::Empty("result records"));
    }
    let ids = scenario_order(records);
    let proposed: Vec<&ResultRecord> = records
        .iter()
        .filter(|r| r.strategy == "Proposed")
        .collect();
    if proposed.is_empty() {
        return Err(Error::Coverage("no Proposed records for table1".into()));
    }
    let med = medians(records);
    let mut ks: Vec<usize> = proposed.iter().filter_map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut header = vec!["gamma".into(), "K".into(), "after_training_on".into()];
    header.extend(ids.iter().cloned());
    let mut rows = Vec::new();
    for g in gamma_order(records) {
        for &k in &ks {
            for (t, after) in ids.iter().enumerate() {
                let mut row = vec![
                    format_gamma(f64::from_bits(g)),
                    k.to_string(),
                    after.clone(),
                ];
                for (e, on) in ids.iter().enumerate() {
                    row.push(if e > t {
                        "-".into()
                    } else {
                        cell(med.get(&("Proposed".into(), Some(k), g, after.clone(), on.clone())))
                    });
                }
                rows.push(row);
            }
        }
    }
    Ok(Table {
        shape: TableShape::Table1,
        header,
        rows,
    })
}

fn table2(memory: &[MemoryRecord]) -> Result<Table> {
    if memory.is_empty() {
        return Err(Error::Empty("memory records"));
    }
    let last = memory.iter().map(|m| m.step).max().unwrap_or(0);
    // memory carried into the final scenario
    let step = last.saturating_sub(1);
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut seen = Vec::new();
    for m in memory.iter().filter(|m| m.step == step) {
        if seen.contains(&m.strategy) {
            continue;
        }
        seen.push(m.strategy.clone());
        let note = match m.strategy.as_str() {
            "MTL" => "offline data assumed, not stored",
            "DT" => "no memory",
            _ => "",
        };
        rows.push(vec![
            m.strategy.clone(),
            m.bytes.to_string(),
            format_mib(m.bytes),
            note.into(),
        ]);
    }
    Ok(Table {
        shape: TableShape::Table2,
        header: ["strategy", "bytes", "MiB", "note"]
            .map(String::from)
            .to_vec(),
        rows,
    })
}

fn fig6(records: &[ResultRecord]) -> Result<Table> {
    if records.is_empty() {
        return Err(Error::Empty("result records"));
    }
    let ids = scenario_order(records);
    let last = ids.last().expect("non-empty records").clone();
    let med = medians(records);
    let mut strategies = Vec::new();
    for r in records {
        push_unique(&mut strategies, (r.strategy.clone(), r.k));
    }
    let mut header = vec!["gamma".into(), "strategy".into(), "K".into()];
    header.extend(ids.iter().cloned());
    let mut rows = Vec::new();
    for g in gamma_order(records) {
        for (label, k) in &strategies {
            let mut row = vec![format_gamma(f64::from_bits(g)), label.clone(), format_k(*k)];
            for on in &ids {
                row.push(cell(med.get(&(
                    label.clone(),
                    *k,
                    g,
                    last.clone(),
                    on.clone(),
                ))));
            }
            rows.push(row);
        }
    }
    Ok(Table {
        shape: TableShape::Fig6,
        header,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(
        strategy: &str,
        k: Option<usize>,
        after: &str,
        on: &str,
        nmse: f64,
        seed: u64,
    ) -> ResultRecord {
        ResultRecord {
            strategy: strategy.into(),
            trained_up_to: after.into(),
            evaluated_on: on.into(),
            gamma: 0.0625,
            k,
            nmse_db: nmse,
            seed,
            wall_seconds: None,
        }
    }

    fn triangle(strategy: &str, k: Option<usize>, seed: u64, shift: f64) -> Vec<ResultRecord> {
        let ids = ["A", "B", "C"];
        let mut out = Vec::new();
        for t in 0..3 {
            for e in 0..=t {
                out.push(rec(
                    strategy,
                    k,
                    ids[t],
                    ids[e],
                    -10.0 + shift + (t - e) as f64,
                    seed,
                ));
            }
        }
        out
    }

    #[test]
    fn table1_is_lower_triangular_with_medians() {
        let mut recs = triangle("Proposed", Some(250), 0, 0.0);
        recs.extend(triangle("Proposed", Some(250), 1, 1.0));
        recs.extend(triangle("Proposed", Some(250), 2, 5.0));
        recs.extend(triangle("Proposed", Some(100), 0, 0.0));
        recs.extend(triangle("DT", None, 0, 3.0));
        let t = emit_tables(&recs, &[], TableShape::Table1).unwrap();
        assert_eq!(t.header, ["gamma", "K", "after_training_on", "A", "B", "C"]);
        assert_eq!(t.rows.len(), 6);
        assert_eq!(t.rows[0], ["1/16", "100", "A", "-10.00", "-", "-"]);
        assert_eq!(t.rows[3], ["1/16", "250", "A", "-9.00", "-", "-"]);
        assert_eq!(t.rows[5], ["1/16", "250", "C", "-7.00", "-8.00", "-9.00"]);
        assert!(t.to_text().lines().count() == 7);
        assert!(emit_tables(&triangle("DT", None, 0, 0.0), &[], TableShape::Table1).is_err());
        assert!(matches!(
            emit_tables(&[], &[], TableShape::Fig6),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn table2_lists_mib() {
        let mem = |s: &str, step, bytes| MemoryRecord {
            strategy: s.into(),
            k: None,
            gamma: 0.0625,
            step,
            scenario: ["A", "B", "C"][step].into(),
            bytes,
        };
        let memory = vec![
            mem("Reservoir", 1, 16_384_000),
            mem("Joint", 0, 40_960_000),
            mem("Joint", 1, 81_920_000),
            mem("Joint", 2, 122_880_000),
            mem("MTL", 1, 0),
        ];
        let t = emit_tables(&[], &memory, TableShape::Table2).unwrap();
        assert_eq!(t.rows[0], ["Reservoir", "16384000", "15.625 MiB", ""]);
        assert_eq!(t.rows[1], ["Joint", "81920000", "78.125 MiB", ""]);
        assert_eq!(t.rows[2][0], "MTL");
        assert!(t.to_csv().unwrap().starts_with("strategy,bytes,MiB,note\n"));
    }

    #[test]
    fn fig6_reports_after_last_scenario() {
        let mut recs = triangle("DT", None, 0, 0.0);
        recs.extend(triangle("Proposed", Some(5), 0, 1.0));
        recs.push(rec("MTL", None, "C", "A", -12.0, 0));
        let t = emit_tables(&recs, &[], TableShape::Fig6).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0], ["1/16", "DT", "-", "-8.00", "-9.00", "-10.00"]);
        assert_eq!(t.rows[2], ["1/16", "MTL", "-", "-12.00", "-", "-"]);
    }

    #[test]
    fn median_and_gamma_format() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(format_gamma(1.0 / 128.0), "1/128");
        assert_eq!(format_gamma(0.3), "0.3");
    }
}
