//! Tabular dataset loading, min-max scaling and IID client partitioning.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub mod synth;

/// Name of the binary target column in the BRFSS diabetes files.
pub const LABEL_COLUMN: &str = "Diabetes_binary";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty file: no header row")]
    Empty,
    #[error("no data rows after header")]
    NoRows,
    #[error("label column {0:?} not found in header")]
    MissingLabel(String),
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("row {row}: label {value} is not 0 or 1")]
    BadLabel { row: usize, value: f64 },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RowWidth { row: usize, expected: usize, found: usize },
    #[error("invalid partition: {0}")]
    Partition(String),
}

/// Row-major feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    n_cols: usize,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let n_cols = feature_names.len();
        if labels.is_empty() {
            return Err(DataError::NoRows);
        }
        if features.len() != labels.len() * n_cols {
            return Err(DataError::RowWidth {
                row: 0,
                expected: labels.len() * n_cols,
                found: features.len(),
            });
        }
        if let Some((row, &value)) = labels.iter().enumerate().find(|(_, l)| **l != 0.0 && **l != 1.0) {
            return Err(DataError::BadLabel { row, value });
        }
        Ok(Self { features, labels, n_cols, feature_names })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rows()).map(move |i| self.features[i * self.n_cols + j])
    }

    /// Writes the dataset back out with the label as the first column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec![LABEL_COLUMN.to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![format!("{:.1}", self.labels[i])];
            rec.extend(self.row(i).iter().map(|v| format!("{v:.1}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| DataError::Io { path: path.as_ref().display().to_string(), source })?;
        Ok(())
    }
}

/// Parses a comma-separated file with a header row and a `Diabetes_binary`
/// label column; every other column becomes a feature.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Dataset, DataError> {
    if text.trim().is_empty() {
        return Err(DataError::Empty);
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = header
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or_else(|| DataError::MissingLabel(LABEL_COLUMN.into()))?;
    let feature_names: Vec<String> =
        header.iter().enumerate().filter(|(j, _)| *j != label_idx).map(|(_, h)| h.clone()).collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // Row numbers in diagnostics are 1-based data rows.
        let row = i + 1;
        if record.len() != header.len() {
            return Err(DataError::RowWidth { row, expected: header.len(), found: record.len() });
        }
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                DataError::NonNumeric { row, column: header[j].clone(), value: cell.to_string() }
            })?;
            if j == label_idx {
                if value != 0.0 && value != 1.0 {
                    return Err(DataError::BadLabel { row, value });
                }
                labels.push(value);
            } else {
                features.push(value);
            }
        }
    }
    if labels.is_empty() {
        return Err(DataError::NoRows);
    }
    Dataset::new(features, labels, feature_names)
}

/// Per-feature min-max scaler. Constant features map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits on the given rows only (the training population).
    pub fn fit(data: &Dataset, rows: &[usize]) -> Self {
        let mut min = vec![f64::INFINITY; data.n_cols()];
        let mut max = vec![f64::NEG_INFINITY; data.n_cols()];
        for &i in rows {
            for (j, v) in data.row(i).iter().enumerate() {
                min[j] = min[j].min(*v);
                max[j] = max[j].max(*v);
            }
        }
        Self { min, max }
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        let n = data.n_cols();
        let features = data
            .features
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let j = k % n;
                let span = self.max[j] - self.min[j];
                if span > 0.0 && span.is_finite() {
                    (v - self.min[j]) / span
                } else {
                    0.0
                }
            })
            .collect();
        Dataset { features, ..data.clone() }
    }
}

/// Min-max scales every feature to [0, 1] over all rows.
pub fn normalize(data: &Dataset) -> Dataset {
    let all: Vec<usize> = (0..data.n_rows()).collect();
    MinMaxScaler::fit(data, &all).transform(data)
}

/// Row assignment: a held-out test set plus one shard per client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
    pub test_indices: Vec<usize>,
}

impl Partition {
    pub fn train_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.shards.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }
}

/// Seeded shuffle; the first `⌊N·test_fraction⌋` rows become the test set
/// and the rest are dealt round-robin so shard sizes differ by at most one.
pub fn partition(
    n_rows: usize,
    n_clients: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<Partition, DataError> {
    if n_clients == 0 {
        return Err(DataError::Partition("need at least one client".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DataError::Partition(format!("test_fraction {test_fraction} not in [0,1)")));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (n_rows as f64 * test_fraction).floor() as usize;
    let (test, train) = order.split_at(n_test);
    if n_clients > train.len() {
        return Err(DataError::Partition(format!(
            "{n_clients} clients but only {} training rows",
            train.len()
        )));
    }
    let mut shards = vec![Vec::with_capacity(train.len() / n_clients + 1); n_clients];
    for (k, &row) in train.iter().enumerate() {
        shards[k % n_clients].push(row);
    }
    Ok(Partition { shards, test_indices: test.to_vec() })
}
