//! Tabular data ingestion and the GAN's numeric representation.
//!
//! Continuous columns use mode-specific normalization: a Gaussian mixture is
//! fit per column, each value is encoded as a scalar offset from its sampled
//! mode (`alpha = (c - mu_k) / (4 sigma_k)`, clipped to `[-1, 1]`) plus a
//! one-hot mode indicator. Categorical columns are one-hot encoded. The
//! schema is closed-world after fitting: unseen categories are errors.

mod csv_load;
mod encode;
mod gmm;
mod split;

pub use csv_load::load_csv;
pub use encode::{decode_row, encode_row, encode_table, EncodedTable};
pub use gmm::fit_gmm;
pub use split::kfold_split;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("column {0:?} named in the schema config is missing from the data")]
    MissingColumn(String),
    #[error("zero rows remain after dropping incomplete rows")]
    ZeroRows,
    #[error("unseen category {value:?} in column {column:?}")]
    UnseenCategory { column: String, value: String },
    #[error("invalid schema config: {0}")]
    BadConfig(String),
    #[error("k-fold split needs row_count >= k, got {rows} rows for k = {k}")]
    NotEnoughRows { rows: usize, k: usize },
    #[error("encoded vector has width {got}, schema expects {want}")]
    BadWidth { got: usize, want: usize },
}

pub type Result<T> = std::result::Result<T, TabularError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

/// One component of a fitted per-column Gaussian mixture.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianMode {
    pub mean: f64,
    pub std: f64,
    pub weight: f64,
}

/// A raw table cell, typed per the schema config.
#[derive(Clone, Debug, PartialEq)]
pub enum RawCell {
    Num(f64),
    Cat(String),
}

impl RawCell {
    pub fn as_num(&self) -> f64 {
        match self {
            RawCell::Num(x) => *x,
            RawCell::Cat(c) => panic!("expected numeric cell, got {c:?}"),
        }
    }

    pub fn as_cat(&self) -> &str {
        match self {
            RawCell::Cat(c) => c,
            RawCell::Num(x) => panic!("expected categorical cell, got {x}"),
        }
    }
}

/// Typed rows in schema column order, plus the count of rows dropped during
/// cleaning.
#[derive(Clone, Debug)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub rows: Vec<Vec<RawCell>>,
    pub dropped_rows: usize,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Subset of rows by index, preserving order.
    pub fn select(&self, indices: &[usize]) -> RawTable {
        RawTable {
            column_names: self.column_names.clone(),
            kinds: self.kinds.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            dropped_rows: 0,
        }
    }
}

/// User-facing schema config: column kinds, the target column, and the task.
/// Columns absent from `columns` are ignored when loading.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub columns: BTreeMap<String, ColumnKind>,
    pub target: String,
    pub task: TaskKind,
    /// Category treated as the positive class for classification metrics.
    /// Defaults to the last category in sorted order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_class: Option<String>,
    /// Mixture size cap for continuous columns (default 10).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_modes: Option<usize>,
}

impl SchemaConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SchemaConfig = serde_json::from_str(text)
            .map_err(|e| TabularError::BadConfig(e.to_string()))?;
        if !cfg.columns.contains_key(&cfg.target) {
            return Err(TabularError::BadConfig(format!(
                "target column {:?} not listed in columns",
                cfg.target
            )));
        }
        Ok(cfg)
    }

    pub fn max_modes(&self) -> usize {
        self.max_modes.unwrap_or(10)
    }
}

/// Fitted per-column metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    /// Categorical: ordered category list (sorted, unique).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    /// Categorical: per-category row counts from the fitting data, used for
    /// log-frequency training-by-sampling.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub category_counts: Vec<u64>,
    /// Continuous: fitted mixture.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<GaussianMode>,
    pub is_target: bool,
    /// Continuous regression target: min-max bounds for scaling the label
    /// to [0, 1] in downstream training and metric reporting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_bounds: Option<(f64, f64)>,
}

impl ColumnMeta {
    /// Encoded width: continuous is 1 scalar + one-hot mode indicator;
    /// categorical is a plain one-hot.
    pub fn encoded_width(&self) -> usize {
        match self.kind {
            ColumnKind::Continuous => 1 + self.modes.len(),
            ColumnKind::Categorical => self.categories.len(),
        }
    }

    pub fn category_index(&self, value: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == value)
    }
}

/// Column span within the encoded layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColSpan {
    pub offset: usize,
    pub width: usize,
}

/// Fitted table schema: column metadata plus the derived encoded layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "SchemaParts", into = "SchemaParts")]
pub struct TableSchema {
    columns: Vec<ColumnMeta>,
    task: TaskKind,
    positive_category: Option<usize>,
    // Derived; rebuilt on deserialization.
    spans: Vec<ColSpan>,
    width: usize,
    target_index: usize,
}

#[derive(Serialize, Deserialize)]
struct SchemaParts {
    columns: Vec<ColumnMeta>,
    task: TaskKind,
    positive_category: Option<usize>,
}

impl From<SchemaParts> for TableSchema {
    fn from(p: SchemaParts) -> Self {
        TableSchema::new(p.columns, p.task, p.positive_category)
    }
}

impl From<TableSchema> for SchemaParts {
    fn from(s: TableSchema) -> Self {
        SchemaParts {
            columns: s.columns,
            task: s.task,
            positive_category: s.positive_category,
        }
    }
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnMeta>, task: TaskKind, positive_category: Option<usize>) -> Self {
        let target_index = columns
            .iter()
            .position(|c| c.is_target)
            .expect("schema requires exactly one target column");
        assert_eq!(
            columns.iter().filter(|c| c.is_target).count(),
            1,
            "schema requires exactly one target column"
        );
        let mut spans = Vec::with_capacity(columns.len());
        let mut offset = 0;
        for col in &columns {
            let width = col.encoded_width();
            spans.push(ColSpan { offset, width });
            offset += width;
        }
        TableSchema {
            columns,
            task,
            positive_category,
            spans,
            width: offset,
            target_index,
        }
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spans(&self) -> &[ColSpan] {
        &self.spans
    }

    pub fn span(&self, col: usize) -> ColSpan {
        self.spans[col]
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn target_span(&self) -> ColSpan {
        self.spans[self.target_index]
    }

    pub fn target_column(&self) -> &ColumnMeta {
        &self.columns[self.target_index]
    }

    /// Positive class index for binary classification metrics.
    pub fn positive_category(&self) -> usize {
        self.positive_category
            .unwrap_or_else(|| self.target_column().categories.len().saturating_sub(1))
    }

    /// Encoded width with the target segment removed (downstream features).
    pub fn feature_width(&self) -> usize {
        self.width - self.target_span().width
    }

    /// Indices of categorical columns (the conditionable segments).
    pub fn categorical_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == ColumnKind::Categorical)
            .map(|(i, _)| i)
            .collect()
    }

    /// Condition-vector layout: `(column index, offset within the condition
    /// vector, category count)` per categorical column.
    pub fn cond_layout(&self) -> Vec<(usize, usize, usize)> {
        let mut layout = Vec::new();
        let mut offset = 0;
        for (i, col) in self.columns.iter().enumerate() {
            if col.kind == ColumnKind::Categorical {
                layout.push((i, offset, col.categories.len()));
                offset += col.categories.len();
            }
        }
        layout
    }

    pub fn cond_width(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Categorical)
            .map(|c| c.categories.len())
            .sum()
    }

    /// Min-max scale a raw continuous target value to [0, 1].
    pub fn scale_target(&self, value: f64) -> f64 {
        let (lo, hi) = self
            .target_column()
            .scale_bounds
            .expect("scale_target requires a continuous target with fitted bounds");
        let range = if hi > lo { hi - lo } else { 1.0 };
        (value - lo) / range
    }
}

/// Fit a schema (encoders, mixtures, category tables) on a raw table.
pub fn fit_schema(
    table: &RawTable,
    config: &SchemaConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<TableSchema> {
    if table.n_rows() == 0 {
        return Err(TabularError::ZeroRows);
    }
    let mut columns = Vec::with_capacity(table.column_names.len());
    for (ci, name) in table.column_names.iter().enumerate() {
        let kind = table.kinds[ci];
        let is_target = *name == config.target;
        let meta = match kind {
            ColumnKind::Categorical => {
                let mut cats: Vec<String> = table
                    .rows
                    .iter()
                    .map(|r| r[ci].as_cat().to_string())
                    .collect();
                cats.sort();
                cats.dedup();
                let counts = cats
                    .iter()
                    .map(|c| table.rows.iter().filter(|r| r[ci].as_cat() == c).count() as u64)
                    .collect();
                ColumnMeta {
                    name: name.clone(),
                    kind,
                    categories: cats,
                    category_counts: counts,
                    modes: Vec::new(),
                    is_target,
                    scale_bounds: None,
                }
            }
            ColumnKind::Continuous => {
                let values: Vec<f64> = table.rows.iter().map(|r| r[ci].as_num()).collect();
                let modes = fit_gmm(&values, config.max_modes(), rng);
                let scale_bounds = if is_target && config.task == TaskKind::Regression {
                    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    Some((lo, hi))
                } else {
                    None
                };
                ColumnMeta {
                    name: name.clone(),
                    kind,
                    categories: Vec::new(),
                    category_counts: Vec::new(),
                    modes,
                    is_target,
                    scale_bounds,
                }
            }
        };
        columns.push(meta);
    }

    let target = columns
        .iter()
        .find(|c| c.is_target)
        .ok_or_else(|| TabularError::BadConfig(format!("target {:?} not in table", config.target)))?;
    match config.task {
        TaskKind::Classification => {
            if target.kind != ColumnKind::Categorical || target.categories.len() != 2 {
                return Err(TabularError::BadConfig(
                    "classification target must be a binary categorical column".into(),
                ));
            }
        }
        TaskKind::Regression => {
            if target.kind != ColumnKind::Continuous {
                return Err(TabularError::BadConfig(
                    "regression target must be a continuous column".into(),
                ));
            }
        }
    }

    let positive_category = match (&config.positive_class, config.task) {
        (Some(name), TaskKind::Classification) => Some(
            target
                .category_index(name)
                .ok_or_else(|| TabularError::BadConfig(format!("positive_class {name:?} not a target category")))?,
        ),
        _ => None,
    };

    Ok(TableSchema::new(columns, config.task, positive_category))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn toy_table() -> (RawTable, SchemaConfig) {
        let rows = vec![
            vec![RawCell::Num(1.0), RawCell::Cat("a".into())],
            vec![RawCell::Num(2.0), RawCell::Cat("b".into())],
            vec![RawCell::Num(3.0), RawCell::Cat("a".into())],
        ];
        let table = RawTable {
            column_names: vec!["x".into(), "y".into()],
            kinds: vec![ColumnKind::Continuous, ColumnKind::Categorical],
            rows,
            dropped_rows: 0,
        };
        let config = SchemaConfig {
            columns: [
                ("x".to_string(), ColumnKind::Continuous),
                ("y".to_string(), ColumnKind::Categorical),
            ]
            .into_iter()
            .collect(),
            target: "y".into(),
            task: TaskKind::Classification,
            positive_class: None,
            max_modes: Some(3),
        };
        (table, config)
    }

    #[test]
    fn layout_is_contiguous() {
        let (table, config) = toy_table();
        let schema = fit_schema(&table, &config, &mut substream(1, &[])).unwrap();
        let mut offset = 0;
        for span in schema.spans() {
            assert_eq!(span.offset, offset);
            offset += span.width;
        }
        assert_eq!(offset, schema.width());
        assert_eq!(schema.target_index(), 1);
        assert_eq!(schema.cond_width(), 2);
    }

    #[test]
    fn categories_sorted_and_counted() {
        let (table, config) = toy_table();
        let schema = fit_schema(&table, &config, &mut substream(1, &[])).unwrap();
        let target = schema.target_column();
        assert_eq!(target.categories, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(target.category_counts, vec![2, 1]);
        assert_eq!(schema.positive_category(), 1);
    }

    #[test]
    fn schema_round_trips_through_json() {
        let (table, config) = toy_table();
        let schema = fit_schema(&table, &config, &mut substream(1, &[])).unwrap();
        let text = serde_json::to_string(&schema).unwrap();
        let back: TableSchema = serde_json::from_str(&text).unwrap();
        assert_eq!(back.width(), schema.width());
        assert_eq!(back.spans(), schema.spans());
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn classification_target_must_be_binary_categorical() {
        let (table, mut config) = toy_table();
        config.target = "x".into();
        assert!(fit_schema(&table, &config, &mut substream(1, &[])).is_err());
    }
}
