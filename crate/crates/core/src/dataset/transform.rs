use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::schema::{ColumnDescriptor, ColumnKind, OutcomeKind};
use super::table::{Cell, RawTable};
use crate::error::{Error, Result};

/// Features whose spread falls below this are zeroed instead of scaled.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Classification {
        num_classes: usize,
        labels: Vec<usize>,
    },
    Regression {
        values: Vec<f64>,
    },
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Classification { labels, .. } => labels.len(),
            Target::Regression { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Target {
        match self {
            Target::Classification {
                num_classes,
                labels,
            } => Target::Classification {
                num_classes: *num_classes,
                labels: rows.iter().map(|&i| labels[i]).collect(),
            },
            Target::Regression { values } => Target::Regression {
                values: rows.iter().map(|&i| values[i]).collect(),
            },
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, Target::Classification { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeVector {
    pub task_name: String,
    pub target: Target,
}

impl OutcomeVector {
    fn validate(&self) -> Result<()> {
        match &self.target {
            Target::Classification {
                num_classes,
                labels,
            } => {
                if *num_classes < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "task `{}`: classification needs >= 2 classes",
                        self.task_name
                    )));
                }
                if let Some(bad) = labels.iter().find(|&&l| l >= *num_classes) {
                    return Err(Error::InvalidArgument(format!(
                        "task `{}`: label {bad} outside [0, {num_classes})",
                        self.task_name
                    )));
                }
            }
            Target::Regression { values } => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "regression target of task `{}`",
                        self.task_name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

impl FeatureStats {
    pub const IDENTITY: FeatureStats = FeatureStats {
        mean: 0.0,
        std: 1.0,
    };
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub stats: Vec<FeatureStats>,
    /// Columns whose fitted std fell under [`MIN_STD`]; these map to 0.
    pub zeroed: Vec<bool>,
}

impl Normalizer {
    /// Population mean and std of each column over `rows`.
    pub fn fit(features: &Array2<f64>, rows: &[usize]) -> Result<Normalizer> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot fit normalizer on zero rows".into(),
            ));
        }
        let n = rows.len() as f64;
        let mut stats = Vec::with_capacity(features.ncols());
        let mut zeroed = Vec::with_capacity(features.ncols());
        for col in features.axis_iter(Axis(1)) {
            let mean = rows.iter().map(|&i| col[i]).sum::<f64>() / n;
            let var = rows.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            let constant = std < MIN_STD;
            stats.push(FeatureStats {
                mean,
                std: if constant { 1.0 } else { std },
            });
            zeroed.push(constant);
        }
        Ok(Normalizer { stats, zeroed })
    }

    pub fn identity(d: usize) -> Normalizer {
        Normalizer {
            stats: vec![FeatureStats::IDENTITY; d],
            zeroed: vec![false; d],
        }
    }

    /// Applies `(x - mean) / std`; zeroed columns become identically 0.
    pub fn apply(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.stats.len() {
            return Err(Error::Shape(format!(
                "normalizer has {} features, matrix has {}",
                self.stats.len(),
                features.ncols()
            )));
        }
        let mut out = features.clone();
        for ((mut col, s), &z) in out
            .axis_iter_mut(Axis(1))
            .zip(&self.stats)
            .zip(&self.zeroed)
        {
            if z {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - s.mean) / s.std);
            }
        }
        Ok(out)
    }
}

/// Model-ready data: a dense feature matrix plus one outcome vector per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub feature_names: Vec<String>,
    pub outcomes: Vec<OutcomeVector>,
    pub normalization_stats: Vec<FeatureStats>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        feature_names: Vec<String>,
        outcomes: Vec<OutcomeVector>,
        normalization_stats: Vec<FeatureStats>,
    ) -> Result<Dataset> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::Shape(format!(
                "dataset must be non-empty, got {n}x{d}"
            )));
        }
        if outcomes.is_empty() {
            return Err(Error::Shape("dataset needs at least one outcome".into()));
        }
        if feature_names.len() != d || normalization_stats.len() != d {
            return Err(Error::Shape(format!(
                "{d} features but {} names and {} stats",
                feature_names.len(),
                normalization_stats.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        for o in &outcomes {
            if o.target.len() != n {
                return Err(Error::Shape(format!(
                    "task `{}` has {} targets for {n} samples",
                    o.task_name,
                    o.target.len()
                )));
            }
            o.validate()?;
        }
        Ok(Dataset {
            features,
            feature_names,
            outcomes,
            normalization_stats,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_tasks(&self) -> usize {
        self.outcomes.len()
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.outcomes.iter().position(|o| o.task_name == name)
    }

    pub fn task_names(&self) -> Vec<&str> {
        self.outcomes.iter().map(|o| o.task_name.as_str()).collect()
    }

    pub fn targets(&self) -> Vec<Target> {
        self.outcomes.iter().map(|o| o.target.clone()).collect()
    }

    /// Row subset, preserving the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            outcomes: self
                .outcomes
                .iter()
                .map(|o| OutcomeVector {
                    task_name: o.task_name.clone(),
                    target: o.target.select(rows),
                })
                .collect(),
            normalization_stats: self.normalization_stats.clone(),
        }
    }

    /// Keeps only the listed tasks, in the listed order.
    pub fn select_tasks(&self, tasks: &[usize]) -> Dataset {
        Dataset {
            outcomes: tasks.iter().map(|&t| self.outcomes[t].clone()).collect(),
            ..self.clone()
        }
    }

    /// Same rows and outcomes with a replaced feature matrix.
    pub fn with_features(&self, features: Array2<f64>, stats: Vec<FeatureStats>) -> Dataset {
        Dataset {
            features,
            normalization_stats: stats,
            ..self.clone()
        }
    }

    /// Schema describing [`Dataset::to_table`] output.
    pub fn schema(&self) -> Vec<ColumnDescriptor> {
        let mut schema: Vec<ColumnDescriptor> = self
            .feature_names
            .iter()
            .map(ColumnDescriptor::numeric)
            .collect();
        for (t, o) in self.outcomes.iter().enumerate() {
            schema.push(match &o.target {
                Target::Classification { num_classes, .. } => {
                    ColumnDescriptor::classification(&o.task_name, t, *num_classes)
                }
                Target::Regression { .. } => ColumnDescriptor::regression(&o.task_name, t),
            });
        }
        schema
    }

    /// Features followed by outcome columns.
    pub fn to_table(&self) -> RawTable {
        let rows = (0..self.n_samples())
            .map(|i| {
                let mut row: Vec<Cell> =
                    self.features.row(i).iter().map(|&v| Cell::Num(v)).collect();
                for o in &self.outcomes {
                    row.push(match &o.target {
                        Target::Classification { labels, .. } => Cell::Num(labels[i] as f64),
                        Target::Regression { values } => Cell::Num(values[i]),
                    });
                }
                row
            })
            .collect();
        RawTable {
            schema: self.schema(),
            rows,
        }
    }
}

enum FeatureSource {
    Column(usize),
    GroupSum(Vec<usize>),
    Indicator(usize, String),
}

/// Converts a complete table into a z-scored dataset. See [`transform_with`].
pub fn transform(table: &RawTable) -> Result<Dataset> {
    transform_with(table, true)
}

/// Maps ordinals, sums timeseries groups into `<group>_sum`, one-hot encodes
/// categoricals as `<name>=<level>` and, when `normalize` is set, z-scores
/// every feature with population statistics over all rows.
///
/// Feature order follows the schema; a timeseries sum sits where the group's
/// first member was. Identifier columns are discarded.
pub fn transform_with(table: &RawTable, normalize: bool) -> Result<Dataset> {
    let table = table.map_ordinals()?;
    let n = table.n_rows();

    let mut sources = Vec::new();
    let mut names = Vec::new();
    let mut groups: BTreeMap<&str, usize> = BTreeMap::new();
    let mut outcome_cols: Vec<(usize, usize, &OutcomeKind)> = Vec::new();

    for (j, col) in table.schema.iter().enumerate() {
        match &col.kind {
            ColumnKind::Numeric | ColumnKind::Ordinal { .. } => {
                sources.push(FeatureSource::Column(j));
                names.push(col.name.clone());
            }
            ColumnKind::Timeseries { group } => match groups.get(group.as_str()) {
                Some(&slot) => {
                    if let FeatureSource::GroupSum(members) = &mut sources[slot] {
                        members.push(j);
                    }
                }
                None => {
                    groups.insert(group, sources.len());
                    sources.push(FeatureSource::GroupSum(vec![j]));
                    names.push(format!("{group}_sum"));
                }
            },
            ColumnKind::Categorical { levels } => {
                for level in levels {
                    sources.push(FeatureSource::Indicator(j, level.clone()));
                    names.push(format!("{}={level}", col.name));
                }
            }
            ColumnKind::Identifier => {}
            ColumnKind::Outcome { task_index, task } => outcome_cols.push((*task_index, j, task)),
        }
    }

    let numeric = |i: usize, j: usize| -> Result<f64> {
        match &table.rows[i][j] {
            Cell::Num(v) => Ok(*v),
            Cell::Missing => Err(Error::Parse {
                row: i,
                column: table.schema[j].name.clone(),
                value: String::new(),
                reason: "missing value; impute before transforming".into(),
            }),
            Cell::Text(s) => Err(Error::Parse {
                row: i,
                column: table.schema[j].name.clone(),
                value: s.clone(),
                reason: "expected a number".into(),
            }),
        }
    };

    // Validate categorical values before building indicators.
    for (j, col) in table.schema.iter().enumerate() {
        if let ColumnKind::Categorical { levels } = &col.kind {
            for (i, row) in table.rows.iter().enumerate() {
                match &row[j] {
                    Cell::Text(s) if levels.contains(s) => {}
                    Cell::Num(v) if levels.contains(&super::table::format_number(*v)) => {}
                    other => {
                        return Err(Error::Parse {
                            row: i,
                            column: col.name.clone(),
                            value: format!("{other:?}"),
                            reason: format!("not one of the declared levels {levels:?}"),
                        })
                    }
                }
            }
        }
    }

    let mut features = Array2::<f64>::zeros((n, sources.len()));
    for (f, src) in sources.iter().enumerate() {
        for i in 0..n {
            features[[i, f]] = match src {
                FeatureSource::Column(j) => numeric(i, *j)?,
                FeatureSource::GroupSum(members) => {
                    let mut s = 0.0;
                    for &j in members {
                        s += numeric(i, j)?;
                    }
                    s
                }
                FeatureSource::Indicator(j, level) => {
                    let hit = match &table.rows[i][*j] {
                        Cell::Text(s) => s == level,
                        Cell::Num(v) => &super::table::format_number(*v) == level,
                        Cell::Missing => false,
                    };
                    if hit {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
    }

    outcome_cols.sort_by_key(|&(t, _, _)| t);
    let mut outcomes = Vec::with_capacity(outcome_cols.len());
    for (_, j, kind) in outcome_cols {
        let name = table.schema[j].name.clone();
        let target = match kind {
            OutcomeKind::Classification { num_classes } => {
                let mut labels = Vec::with_capacity(n);
                for i in 0..n {
                    let v = numeric(i, j)?;
                    if v.fract() != 0.0 || v < 0.0 || v >= *num_classes as f64 {
                        return Err(Error::Parse {
                            row: i,
                            column: name,
                            value: v.to_string(),
                            reason: format!("class label must be an integer in [0, {num_classes})"),
                        });
                    }
                    labels.push(v as usize);
                }
                Target::Classification {
                    num_classes: *num_classes,
                    labels,
                }
            }
            OutcomeKind::Regression => Target::Regression {
                values: (0..n).map(|i| numeric(i, j)).collect::<Result<_>>()?,
            },
        };
        outcomes.push(OutcomeVector {
            task_name: name,
            target,
        });
    }

    let (features, stats) = if normalize {
        let all: Vec<usize> = (0..n).collect();
        let norm = Normalizer::fit(&features, &all)?;
        (norm.apply(&features)?, norm.stats)
    } else {
        let d = features.ncols();
        (features, vec![FeatureStats::IDENTITY; d])
    };
    Dataset::new(features, names, outcomes, stats)
}
