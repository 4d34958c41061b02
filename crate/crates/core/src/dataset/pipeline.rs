//! Raw cohort table to model-ready dataset.

use serde::{Deserialize, Serialize};

use super::clean::{clean, CleaningReport};
use super::mice::{mice_impute_with_summary, MiceSummary};
use super::schema::ColumnKind;
use super::table::{Cell, RawTable};
use super::transform::{transform_with, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub max_missing_frac: f64,
    pub mice_sweeps: usize,
    pub mice_tol: f64,
    pub normalize: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            max_missing_frac: 0.8,
            mice_sweeps: 10,
            mice_tol: 1e-6,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationSummary {
    /// Numeric feature cells filled by chained equations.
    pub numeric_cells: usize,
    /// Categorical cells filled with their column's most frequent level.
    pub categorical_cells: usize,
    pub sweeps: usize,
    pub last_change: f64,
}

/// Most frequent observed level; ties go to the level listed first.
fn mode_level<'a>(table: &RawTable, j: usize, levels: &'a [String]) -> Option<&'a String> {
    let counts: Vec<usize> = levels
        .iter()
        .map(|l| {
            table
                .column(j)
                .filter(|c| matches!(c, Cell::Text(s) if s == l))
                .count()
        })
        .collect();
    let best = *counts.iter().max()?;
    (best > 0).then(|| &levels[counts.iter().position(|&c| c == best).unwrap()])
}

/// Cleans, maps ordinals, imputes and encodes a raw table.
///
/// Numeric, ordinal and timeseries features are imputed jointly with chained
/// equations; categorical gaps take the column's most frequent level. Outcome
/// cells are never imputed and a missing one is an error.
pub fn preprocess(
    raw: &RawTable,
    opts: &PreprocessOptions,
) -> Result<(Dataset, CleaningReport, ImputationSummary)> {
    let (cleaned, report) = clean(raw, opts.max_missing_frac)?;
    let mut table = cleaned.map_ordinals()?;

    for (j, col) in table.schema.iter().enumerate() {
        if let ColumnKind::Outcome { .. } = col.kind {
            if let Some(i) = table.rows.iter().position(|r| r[j].is_missing()) {
                return Err(Error::Parse {
                    row: i,
                    column: col.name.clone(),
                    value: String::new(),
                    reason: "outcome values cannot be imputed".into(),
                });
            }
        }
    }

    let numeric: Vec<usize> = table
        .schema
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            matches!(
                c.kind,
                ColumnKind::Numeric | ColumnKind::Ordinal { .. } | ColumnKind::Timeseries { .. }
            )
        })
        .map(|(j, _)| j)
        .collect();
    let numeric_missing: usize = numeric.iter().map(|&j| table.missing_count(j)).sum();
    let mut summary = ImputationSummary {
        numeric_cells: numeric_missing,
        categorical_cells: 0,
        sweeps: 0,
        last_change: 0.0,
    };
    if numeric_missing > 0 {
        let (imputed, mice): (RawTable, MiceSummary) = mice_impute_with_summary(
            &table.select_columns(&numeric),
            opts.mice_sweeps,
            opts.mice_tol,
        )?;
        for (row, filled) in table.rows.iter_mut().zip(&imputed.rows) {
            for (&j, cell) in numeric.iter().zip(filled) {
                row[j] = cell.clone();
            }
        }
        summary.sweeps = mice.sweeps;
        summary.last_change = mice.last_change;
    }

    for j in 0..table.n_cols() {
        let ColumnKind::Categorical { levels } = table.schema[j].kind.clone() else {
            continue;
        };
        if table.missing_count(j) == 0 {
            continue;
        }
        let fill = mode_level(&table, j, &levels).cloned().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "categorical column `{}` has no observed level",
                table.schema[j].name
            ))
        })?;
        for row in table.rows.iter_mut() {
            if row[j].is_missing() {
                row[j] = Cell::Text(fill.clone());
                summary.categorical_cells += 1;
            }
        }
    }

    let dataset = transform_with(&table, opts.normalize)?;
    Ok((dataset, report, summary))
}
