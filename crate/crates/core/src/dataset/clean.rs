use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::table::{Cell, RawTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    SingleValued,
    TooManyMissing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub dropped_columns: Vec<DroppedColumn>,
    pub duplicates_removed: usize,
}

#[derive(Hash, PartialEq, Eq)]
enum CellKey<'a> {
    Missing,
    Num(u64),
    Text(&'a str),
}

fn key(cell: &Cell) -> CellKey<'_> {
    match cell {
        Cell::Missing => CellKey::Missing,
        Cell::Num(v) => CellKey::Num(if *v == 0.0 { 0 } else { v.to_bits() }),
        Cell::Text(s) => CellKey::Text(s),
    }
}

fn input_columns(table: &RawTable) -> Vec<usize> {
    (0..table.n_cols())
        .filter(|&j| table.schema[j].kind.is_input())
        .collect()
}

fn dedupe(table: &mut RawTable) -> usize {
    let inputs = input_columns(table);
    let before = table.rows.len();
    let mut seen = HashSet::new();
    let keep: Vec<bool> = table
        .rows
        .iter()
        .map(|row| seen.insert(inputs.iter().map(|&j| key(&row[j])).collect::<Vec<_>>()))
        .collect();
    let mut it = keep.iter();
    table.rows.retain(|_| *it.next().unwrap());
    before - table.rows.len()
}

fn column_verdict(table: &RawTable, j: usize, max_missing_frac: f64) -> Option<DropReason> {
    let n = table.n_rows();
    let mut distinct = HashSet::new();
    let mut missing = 0usize;
    for cell in table.column(j) {
        if cell.is_missing() {
            missing += 1;
        } else {
            distinct.insert(key(cell));
        }
    }
    if distinct.len() <= 1 {
        Some(DropReason::SingleValued)
    } else if n > 0 && missing as f64 / n as f64 > max_missing_frac {
        Some(DropReason::TooManyMissing)
    } else {
        None
    }
}

/// Removes duplicate rows, single-valued columns and mostly-missing columns.
///
/// Rows count as duplicates when every input-attribute cell (identifiers and
/// outcomes excluded) is identical; the first occurrence is kept. A column is
/// dropped when it has at most one distinct observed value, or when its
/// missing fraction is strictly greater than `max_missing_frac`. Outcome and
/// identifier columns are never dropped.
///
/// Each removal can expose another one (a dropped column can make two rows
/// identical), so the three passes repeat until nothing changes. This makes
/// the operation idempotent.
pub fn clean(raw: &RawTable, max_missing_frac: f64) -> Result<(RawTable, CleaningReport)> {
    if !(0.0..=1.0).contains(&max_missing_frac) {
        return Err(Error::InvalidArgument(format!(
            "max_missing_frac must lie in [0, 1], got {max_missing_frac}"
        )));
    }
    let mut table = raw.clone();
    let mut report = CleaningReport::default();
    loop {
        let removed = dedupe(&mut table);
        report.duplicates_removed += removed;

        let mut drop = Vec::new();
        for j in input_columns(&table) {
            if let Some(reason) = column_verdict(&table, j, max_missing_frac) {
                drop.push(j);
                report.dropped_columns.push(DroppedColumn {
                    name: table.schema[j].name.clone(),
                    reason,
                });
            }
        }
        if !drop.is_empty() {
            let keep: Vec<usize> = (0..table.n_cols()).filter(|j| !drop.contains(j)).collect();
            table = table.select_columns(&keep);
        }
        if removed == 0 && drop.is_empty() {
            break;
        }
    }
    if input_columns(&table).is_empty() {
        return Err(Error::InvalidArgument(
            "cleaning dropped every input column".into(),
        ));
    }
    Ok((table, report))
}
