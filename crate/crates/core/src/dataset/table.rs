use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::schema::{validate_schema, ColumnDescriptor, ColumnKind};
use crate::error::{Error, Result};

/// A single parsed cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            _ => None,
        }
    }
}

/// Rows of optional cells laid out in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub schema: Vec<ColumnDescriptor>,
    pub rows: Vec<Vec<Cell>>,
}

const MISSING_TOKEN: &str = "NA";

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s == MISSING_TOKEN
}

impl RawTable {
    pub fn new(schema: Vec<ColumnDescriptor>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        validate_schema(&schema)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::RowLength {
                    row: i,
                    expected: schema.len(),
                    found: row.len(),
                });
            }
        }
        Ok(RawTable { schema, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.rows.iter().map(move |r| &r[j])
    }

    pub fn missing_count(&self, j: usize) -> usize {
        self.column(j).filter(|c| c.is_missing()).count()
    }

    pub fn total_missing(&self) -> usize {
        self.rows
            .iter()
            .flatten()
            .filter(|c| c.is_missing())
            .count()
    }

    /// Keeps only the listed columns, in the listed order.
    ///
    /// The result is not re-validated: selecting away outcome columns is how
    /// the preprocessing pipeline builds its all-numeric imputation input.
    pub fn select_columns(&self, cols: &[usize]) -> RawTable {
        RawTable {
            schema: cols.iter().map(|&j| self.schema[j].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| cols.iter().map(|&j| r[j].clone()).collect())
                .collect(),
        }
    }

    /// Replaces ordinal text cells with their mapped numbers.
    pub fn map_ordinals(&self) -> Result<RawTable> {
        let mut out = self.clone();
        for (j, col) in self.schema.iter().enumerate() {
            let ColumnKind::Ordinal { mapping } = &col.kind else {
                continue;
            };
            for (i, row) in out.rows.iter_mut().enumerate() {
                if let Cell::Text(s) = &row[j] {
                    let v = mapping.get(s).ok_or_else(|| Error::Parse {
                        row: i,
                        column: col.name.clone(),
                        value: s.clone(),
                        reason: "value has no ordinal mapping".into(),
                    })?;
                    row[j] = Cell::Num(*v);
                }
            }
        }
        Ok(out)
    }

    /// Serializes to CSV with `NA` for missing cells.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Missing => MISSING_TOKEN.to_string(),
                Cell::Num(v) => format_number(*v),
                Cell::Text(s) => s.clone(),
            }))?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        // collapse -0
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// Reads a CSV file against a schema. See [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, schema: &[ColumnDescriptor]) -> Result<RawTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parses CSV text whose header names the schema columns in any order.
///
/// Empty cells and the literal `NA` are missing. Numeric, timeseries and
/// outcome columns must parse as finite numbers; other kinds are kept as text.
/// Row numbers in errors are 0-based data rows (the header is not counted).
pub fn read_csv<R: Read>(reader: R, schema: &[ColumnDescriptor]) -> Result<RawTable> {
    validate_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers()?.clone();
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (h, name) in header.iter().enumerate() {
        if schema.iter().all(|c| c.name != name) {
            return Err(Error::UnknownColumn(name.to_string()));
        }
        if position.insert(name, h).is_some() {
            return Err(Error::Schema(format!("header repeats column `{name}`")));
        }
    }
    let order = schema
        .iter()
        .map(|c| {
            position
                .get(c.name.as_str())
                .copied()
                .ok_or_else(|| Error::MissingColumn(c.name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::RowLength {
                row: i,
                expected: header.len(),
                found: record.len(),
            });
        }
        let row = schema
            .iter()
            .zip(&order)
            .map(|(col, &h)| parse_cell(&record[h], col, i))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(RawTable {
        schema: schema.to_vec(),
        rows,
    })
}

fn parse_cell(raw: &str, col: &ColumnDescriptor, row: usize) -> Result<Cell> {
    if is_missing_token(raw) {
        return Ok(Cell::Missing);
    }
    if !col.kind.is_numeric_cell() {
        return Ok(Cell::Text(raw.to_string()));
    }
    let err = |reason: &str| Error::Parse {
        row,
        column: col.name.clone(),
        value: raw.to_string(),
        reason: reason.to_string(),
    };
    let v: f64 = raw.parse().map_err(|_| err("not a number"))?;
    if !v.is_finite() {
        return Err(err("not finite"));
    }
    Ok(Cell::Num(if v == 0.0 { 0.0 } else { v }))
}
