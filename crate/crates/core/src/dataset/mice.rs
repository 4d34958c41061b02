use serde::Serialize;

use super::schema::ColumnKind;
use super::table::{Cell, RawTable};
use crate::error::{Error, Result};
use crate::linalg::least_squares_fit;

/// Diagonal damping added to every normal-equation system.
pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiceSummary {
    pub sweeps: usize,
    /// Largest absolute change of an imputed cell during the last sweep.
    pub last_change: f64,
}

/// Chained-equations imputation of a table of numeric columns.
///
/// Missing cells start at their column mean. Each sweep then visits the
/// incomplete columns in ascending order of missing count (ties by schema
/// order), regresses the column on all other columns over its observed rows
/// and overwrites its missing cells with the fitted values. Iteration stops
/// once the largest change of any imputed cell drops below `tol`, or after
/// `max_sweeps` sweeps. `max_sweeps = 0` yields plain mean imputation.
///
/// Observed cells are never modified.
pub fn mice_impute(table: &RawTable, max_sweeps: usize, tol: f64) -> Result<RawTable> {
    mice_impute_with_summary(table, max_sweeps, tol).map(|(t, _)| t)
}

pub fn mice_impute_with_summary(
    table: &RawTable,
    max_sweeps: usize,
    tol: f64,
) -> Result<(RawTable, MiceSummary)> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be >= 0, got {tol}"
        )));
    }
    let n = table.n_rows();
    let p = table.n_cols();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut missing: Vec<Vec<usize>> = Vec::with_capacity(p);
    let mut observed: Vec<Vec<usize>> = Vec::with_capacity(p);

    for (j, col) in table.schema.iter().enumerate() {
        if matches!(
            col.kind,
            ColumnKind::Categorical { .. } | ColumnKind::Identifier
        ) {
            return Err(Error::InvalidArgument(format!(
                "column `{}` is not numeric; impute after ordinal mapping and before one-hot",
                col.name
            )));
        }
        let mut values = vec![0.0; n];
        let (mut obs, mut miss) = (Vec::new(), Vec::new());
        for (i, row) in table.rows.iter().enumerate() {
            match &row[j] {
                Cell::Num(v) => {
                    values[i] = *v;
                    obs.push(i);
                }
                Cell::Missing => miss.push(i),
                Cell::Text(s) => {
                    return Err(Error::Parse {
                        row: i,
                        column: col.name.clone(),
                        value: s.clone(),
                        reason: "text cell in imputation input".into(),
                    })
                }
            }
        }
        if obs.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "column `{}` has {} observed values; imputation needs at least 2",
                col.name,
                obs.len()
            )));
        }
        let mean = obs.iter().map(|&i| values[i]).sum::<f64>() / obs.len() as f64;
        for &i in &miss {
            values[i] = mean;
        }
        columns.push(values);
        missing.push(miss);
        observed.push(obs);
    }

    let mut order: Vec<usize> = (0..p).filter(|&j| !missing[j].is_empty()).collect();
    order.sort_by_key(|&j| (missing[j].len(), j));

    let mut summary = MiceSummary {
        sweeps: 0,
        last_change: 0.0,
    };
    if !order.is_empty() {
        for _ in 0..max_sweeps {
            let mut max_change = 0.0f64;
            for &j in &order {
                let beta = {
                    let predictors: Vec<&[f64]> = (0..p)
                        .filter(|&k| k != j)
                        .map(|k| columns[k].as_slice())
                        .collect();
                    least_squares_fit(&predictors, &columns[j], &observed[j], RIDGE)?
                };
                for &i in &missing[j] {
                    let mut pred = beta[0];
                    for (b, k) in beta[1..].iter().zip((0..p).filter(|&k| k != j)) {
                        pred += b * columns[k][i];
                    }
                    if !pred.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "imputed value for `{}` row {i}",
                            table.schema[j].name
                        )));
                    }
                    max_change = max_change.max((pred - columns[j][i]).abs());
                    columns[j][i] = pred;
                }
            }
            summary.sweeps += 1;
            summary.last_change = max_change;
            if max_change < tol {
                break;
            }
        }
    }

    let mut out = table.clone();
    for (j, miss) in missing.iter().enumerate() {
        for &i in miss {
            out.rows[i][j] = Cell::Num(columns[j][i]);
        }
    }
    Ok((out, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::schema::ColumnDescriptor as Col;

    fn numeric_table(cols: &[Vec<Option<f64>>]) -> RawTable {
        let schema = (0..cols.len())
            .map(|j| Col::numeric(format!("c{j}")))
            .collect();
        let rows = (0..cols[0].len())
            .map(|i| {
                cols.iter()
                    .map(|c| c[i].map_or(Cell::Missing, Cell::Num))
                    .collect()
            })
            .collect();
        RawTable { schema, rows }
    }

    #[test]
    fn complete_table_unchanged() {
        let t = numeric_table(&[
            vec![Some(1.0), Some(2.0), Some(4.0)],
            vec![Some(0.5), Some(-1.0), Some(3.0)],
        ]);
        let (out, summary) = mice_impute_with_summary(&t, 10, 1e-6).unwrap();
        assert_eq!(out, t);
        assert_eq!(summary.sweeps, 0);
    }

    #[test]
    fn zero_sweeps_is_mean_imputation() {
        let t = numeric_table(&[
            vec![Some(1.0), Some(2.0), Some(3.0), None],
            vec![Some(1.0), Some(5.0), Some(2.0), Some(0.0)],
        ]);
        let out = mice_impute(&t, 0, 1e-6).unwrap();
        assert_eq!(out.rows[3][0], Cell::Num(2.0));
    }

    #[test]
    fn exact_linear_relation_recovered() {
        let x1: Vec<f64> = (0..12).map(|i| (i as f64) * 0.7 - 2.0).collect();
        let x2: Vec<Option<f64>> = x1
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if [2, 5, 9].contains(&i) {
                    None
                } else {
                    Some(2.0 * v)
                }
            })
            .collect();
        let t = numeric_table(&[x1.iter().copied().map(Some).collect(), x2]);
        let out = mice_impute(&t, 10, 1e-9).unwrap();
        for i in [2, 5, 9] {
            let v = out.rows[i][1].as_num().unwrap();
            assert!((v - 2.0 * x1[i]).abs() < 1e-6, "row {i}: {v}");
        }
    }

    #[test]
    fn observed_cells_untouched() {
        let t = numeric_table(&[
            vec![Some(1.0), None, Some(3.0), Some(4.0), Some(0.0)],
            vec![None, Some(2.0), Some(1.0), Some(7.0), Some(2.0)],
            vec![Some(1.5), Some(2.5), None, Some(1.0), Some(3.0)],
        ]);
        let out = mice_impute(&t, 5, 0.0).unwrap();
        assert_eq!(out.total_missing(), 0);
        for (i, row) in t.rows.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if !cell.is_missing() {
                    assert_eq!(&out.rows[i][j], cell);
                }
            }
        }
    }

    #[test]
    fn too_few_observed_is_an_error() {
        let t = numeric_table(&[
            vec![Some(1.0), None, None],
            vec![Some(1.0), Some(2.0), Some(3.0)],
        ]);
        assert!(mice_impute(&t, 5, 1e-6).is_err());
    }

    #[test]
    fn categorical_column_rejected() {
        let mut t = numeric_table(&[vec![Some(1.0), Some(2.0)]]);
        t.schema[0].kind = ColumnKind::Categorical {
            levels: vec!["a".into()],
        };
        assert!(matches!(
            mice_impute(&t, 5, 1e-6),
            Err(Error::InvalidArgument(_))
        ));
    }
}
