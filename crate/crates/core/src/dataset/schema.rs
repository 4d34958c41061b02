//! Column descriptors and their JSON form.
//!
//! A schema document is an array of `{name, kind, params}` objects. `params`
//! is omitted for kinds without parameters:
//!
//! ```json
//! [
//!   {"name": "gest_age", "kind": "numeric"},
//!   {"name": "race", "kind": "categorical", "params": {"levels": ["a", "b"]}},
//!   {"name": "edu", "kind": "ordinal", "params": {"mapping": {"hs": 1, "college": 2}}},
//!   {"name": "kcal_d1", "kind": "timeseries", "params": {"group": "kcal"}},
//!   {"name": "bpd", "kind": "outcome",
//!    "params": {"task_index": 0, "task": "classification", "num_classes": 2}}
//! ]
//! ```

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeKind {
    Classification { num_classes: usize },
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    Numeric,
    Categorical {
        levels: Vec<String>,
    },
    Ordinal {
        mapping: BTreeMap<String, f64>,
    },
    Timeseries {
        group: String,
    },
    Identifier,
    Outcome {
        task_index: usize,
        task: OutcomeKind,
    },
}

impl ColumnKind {
    /// Cells of this kind are parsed as numbers rather than kept as text.
    pub fn is_numeric_cell(&self) -> bool {
        matches!(
            self,
            ColumnKind::Numeric | ColumnKind::Timeseries { .. } | ColumnKind::Outcome { .. }
        )
    }

    /// Input attributes are everything the model may see.
    pub fn is_input(&self) -> bool {
        !matches!(self, ColumnKind::Identifier | ColumnKind::Outcome { .. })
    }

    fn tag(&self) -> &'static str {
        match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical { .. } => "categorical",
            ColumnKind::Ordinal { .. } => "ordinal",
            ColumnKind::Timeseries { .. } => "timeseries",
            ColumnKind::Identifier => "identifier",
            ColumnKind::Outcome { .. } => "outcome",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDescriptor {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnDescriptor {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        ColumnDescriptor {
            name: name.into(),
            kind,
        }
    }

    pub fn numeric(name: impl Into<String>) -> Self {
        Self::new(name, ColumnKind::Numeric)
    }

    pub fn classification(name: impl Into<String>, task_index: usize, num_classes: usize) -> Self {
        Self::new(
            name,
            ColumnKind::Outcome {
                task_index,
                task: OutcomeKind::Classification { num_classes },
            },
        )
    }

    pub fn regression(name: impl Into<String>, task_index: usize) -> Self {
        Self::new(
            name,
            ColumnKind::Outcome {
                task_index,
                task: OutcomeKind::Regression,
            },
        )
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    params: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelsParams {
    levels: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MappingParams {
    mapping: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupParams {
    group: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OutcomeParams {
    task_index: usize,
    task: String,
    #[serde(default)]
    num_classes: Option<usize>,
}

fn params<T: for<'de> Deserialize<'de>>(entry: &Entry) -> Result<T> {
    serde_json::from_value(entry.params.clone())
        .map_err(|e| Error::Schema(format!("column `{}`: bad params: {e}", entry.name)))
}

impl TryFrom<Entry> for ColumnDescriptor {
    type Error = Error;

    fn try_from(entry: Entry) -> Result<Self> {
        let kind = match entry.kind.as_str() {
            "numeric" => ColumnKind::Numeric,
            "identifier" => ColumnKind::Identifier,
            "categorical" => ColumnKind::Categorical {
                levels: params::<LevelsParams>(&entry)?.levels,
            },
            "ordinal" => ColumnKind::Ordinal {
                mapping: params::<MappingParams>(&entry)?.mapping,
            },
            "timeseries" => ColumnKind::Timeseries {
                group: params::<GroupParams>(&entry)?.group,
            },
            "outcome" => {
                let p: OutcomeParams = params(&entry)?;
                let task = match (p.task.as_str(), p.num_classes) {
                    ("classification", Some(k)) => OutcomeKind::Classification { num_classes: k },
                    ("classification", None) => OutcomeKind::Classification { num_classes: 2 },
                    ("regression", None) => OutcomeKind::Regression,
                    ("regression", Some(_)) => {
                        return Err(Error::Schema(format!(
                            "column `{}`: regression outcomes take no num_classes",
                            entry.name
                        )))
                    }
                    (other, _) => {
                        return Err(Error::Schema(format!(
                            "column `{}`: unknown outcome task `{other}`",
                            entry.name
                        )))
                    }
                };
                ColumnKind::Outcome {
                    task_index: p.task_index,
                    task,
                }
            }
            other => {
                return Err(Error::Schema(format!(
                    "column `{}`: unknown kind `{other}`",
                    entry.name
                )))
            }
        };
        Ok(ColumnDescriptor {
            name: entry.name,
            kind,
        })
    }
}

impl From<&ColumnDescriptor> for Entry {
    fn from(col: &ColumnDescriptor) -> Self {
        let params = match &col.kind {
            ColumnKind::Numeric | ColumnKind::Identifier => Value::Null,
            ColumnKind::Categorical { levels } => json!({ "levels": levels }),
            ColumnKind::Ordinal { mapping } => json!({ "mapping": mapping }),
            ColumnKind::Timeseries { group } => json!({ "group": group }),
            ColumnKind::Outcome { task_index, task } => match task {
                OutcomeKind::Classification { num_classes } => json!({
                    "task_index": task_index,
                    "task": "classification",
                    "num_classes": num_classes,
                }),
                OutcomeKind::Regression => json!({
                    "task_index": task_index,
                    "task": "regression",
                }),
            },
        };
        Entry {
            name: col.name.clone(),
            kind: col.kind.tag().to_string(),
            params,
        }
    }
}

/// Parses and validates a schema document.
pub fn parse_schema(text: &str) -> Result<Vec<ColumnDescriptor>> {
    let entries: Vec<Entry> = serde_json::from_str(text)?;
    let schema = entries
        .into_iter()
        .map(ColumnDescriptor::try_from)
        .collect::<Result<Vec<_>>>()?;
    validate_schema(&schema)?;
    Ok(schema)
}

pub fn schema_to_json(schema: &[ColumnDescriptor]) -> String {
    let entries: Vec<Entry> = schema.iter().map(Entry::from).collect();
    let mut text = serde_json::to_string_pretty(&entries).expect("schema entries serialize");
    text.push('\n');
    text
}

/// Checks name uniqueness, level/mapping sanity and the outcome task indexing.
pub fn validate_schema(schema: &[ColumnDescriptor]) -> Result<()> {
    let mut names = HashSet::new();
    let mut task_indices = Vec::new();
    for col in schema {
        if col.name.is_empty() {
            return Err(Error::Schema("empty column name".into()));
        }
        if !names.insert(col.name.as_str()) {
            return Err(Error::Schema(format!(
                "duplicate column name `{}`",
                col.name
            )));
        }
        match &col.kind {
            ColumnKind::Categorical { levels } => {
                if levels.is_empty() {
                    return Err(Error::Schema(format!("column `{}`: no levels", col.name)));
                }
                let distinct: HashSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(Error::Schema(format!(
                        "column `{}`: duplicate levels",
                        col.name
                    )));
                }
            }
            ColumnKind::Ordinal { mapping } => {
                if mapping.is_empty() {
                    return Err(Error::Schema(format!(
                        "column `{}`: empty mapping",
                        col.name
                    )));
                }
                if mapping.values().any(|v| !v.is_finite()) {
                    return Err(Error::Schema(format!(
                        "column `{}`: non-finite mapping value",
                        col.name
                    )));
                }
            }
            ColumnKind::Timeseries { group } if group.is_empty() => {
                return Err(Error::Schema(format!("column `{}`: empty group", col.name)));
            }
            ColumnKind::Outcome { task_index, task } => {
                if let OutcomeKind::Classification { num_classes } = task {
                    if *num_classes < 2 {
                        return Err(Error::Schema(format!(
                            "column `{}`: classification needs at least 2 classes",
                            col.name
                        )));
                    }
                }
                task_indices.push(*task_index);
            }
            _ => {}
        }
    }
    task_indices.sort_unstable();
    if task_indices.is_empty() {
        return Err(Error::Schema("schema declares no outcome column".into()));
    }
    if task_indices.iter().enumerate().any(|(i, &t)| i != t) {
        return Err(Error::Schema(format!(
            "outcome task indices must be exactly 0..{}, found {task_indices:?}",
            task_indices.len()
        )));
    }
    Ok(())
}
