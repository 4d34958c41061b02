//! Ingestion, cleaning, imputation and encoding of tabular cohorts.

mod clean;
mod folds;
mod mice;
mod pipeline;
mod schema;
mod table;
mod transform;

pub use clean::{clean, CleaningReport, DropReason, DroppedColumn};
pub use folds::{kfold_split, FoldPlan};
pub use mice::{mice_impute, mice_impute_with_summary, MiceSummary, RIDGE};
pub use pipeline::{preprocess, ImputationSummary, PreprocessOptions};
pub use schema::{
    parse_schema, schema_to_json, validate_schema, ColumnDescriptor, ColumnKind, OutcomeKind,
};
pub use table::{format_number, load_csv, read_csv, Cell, RawTable};
pub use transform::{
    transform, transform_with, Dataset, FeatureStats, Normalizer, OutcomeVector, Target, MIN_STD,
};
