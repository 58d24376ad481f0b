//! Tabular dataset handling: CSV ingestion, min-max scaling, train/val/test
//! splitting, heterogeneous client sharding, and a synthetic Gaussian-blob
//! generator standing in for the real industrial datasets.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// A labeled feature matrix. Features are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    rows: usize,
    cols: usize,
    labels: Vec<usize>,
    class_count: usize,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        rows: usize,
        cols: usize,
        labels: Vec<usize>,
        class_count: usize,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if features.len() != rows * cols {
            return Err(Error::Shape(format!(
                "feature buffer holds {} values, expected {rows}×{cols}",
                features.len()
            )));
        }
        if labels.len() != rows {
            return Err(Error::Shape(format!(
                "{} labels for {rows} rows",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().position(|&l| l >= class_count) {
            return Err(Error::Domain(format!(
                "label {} at row {bad} out of range for {class_count} classes",
                labels[bad]
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != cols {
                return Err(Error::Shape(format!(
                    "{} feature names for {cols} columns",
                    names.len()
                )));
            }
        }
        Ok(Dataset {
            features,
            rows,
            cols,
            labels,
            class_count,
            feature_names,
        })
    }

    /// Empty dataset with the given shape metadata.
    pub fn empty(cols: usize, class_count: usize) -> Self {
        Dataset {
            features: Vec::new(),
            rows: 0,
            cols,
            labels: Vec::new(),
            class_count,
            feature_names: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.cols
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.cols..(i + 1) * self.cols]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// New dataset holding the given rows (duplicates allowed).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            rows: indices.len(),
            cols: self.cols,
            labels,
            class_count: self.class_count,
            feature_names: self.feature_names.clone(),
        }
    }

    /// Fraction of rows carrying each label.
    pub fn label_frequency(&self, label: usize) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l == label).count() as f64 / self.rows as f64
    }
}

/// Load a dataset from a headered CSV file. All non-label columns must be
/// numeric; the label column must hold integers in `[0, class_count)`.
pub fn load_csv(path: &Path, label_column: &str, class_count: usize) -> Result<Dataset> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("cannot open {display}: {e}"),
        )),
        _ => Error::Serde(format!("cannot read {display}: {e}")),
    })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Serde(format!("bad header in {display}: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Config(format!("label column '{label_column}' not found in {display}")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let cols = feature_names.len();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row_no = row_idx + 1; // 1-based data row, excluding header
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            row: row_no,
            column: "<record>".into(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                path: display.clone(),
                row: row_no,
                column: "<record>".into(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (col_idx, field) in record.iter().enumerate() {
            let field = field.trim();
            if col_idx == label_idx {
                let value: f64 = field.parse().map_err(|_| Error::Parse {
                    path: display.clone(),
                    row: row_no,
                    column: label_column.to_string(),
                    message: format!("label '{field}' is not numeric"),
                })?;
                if value.fract() != 0.0 || value < 0.0 || value >= class_count as f64 {
                    return Err(Error::Parse {
                        path: display.clone(),
                        row: row_no,
                        column: label_column.to_string(),
                        message: format!(
                            "label {value} out of range for {class_count} classes"
                        ),
                    });
                }
                labels.push(value as usize);
            } else {
                let value: f64 = field.parse().map_err(|_| Error::Parse {
                    path: display.clone(),
                    row: row_no,
                    column: headers[col_idx].clone(),
                    message: format!("value '{field}' is not numeric"),
                })?;
                features.push(value);
            }
        }
    }
    let rows = labels.len();
    Dataset::new(features, rows, cols, labels, class_count, Some(feature_names))
}

/// Write a dataset as CSV with the label in a trailing `label` column.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let names: Vec<String> = match dataset.feature_names() {
        Some(names) => names.to_vec(),
        None => (0..dataset.feature_dim()).map(|i| format!("f{i}")).collect(),
    };
    let mut header = names;
    header.push("label".to_string());
    writer
        .write_record(&header)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    for i in 0..dataset.len() {
        let mut record: Vec<String> = dataset.row(i).iter().map(|v| v.to_string()).collect();
        record.push(dataset.labels()[i].to_string());
        writer
            .write_record(&record)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(())
}

/// Shuffle-split into train/val/test. Each part gets `floor(ratio·N)` rows
/// and the remainder goes to train.
pub fn split(
    dataset: &Dataset,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "dataset.split ratios must sum to 1 (got {sum})"
        )));
    }
    if ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::Config("dataset.split ratios must be non-negative".into()));
    }
    let n = dataset.len();
    if n < 10 {
        log::warn!("degenerate split: only {n} rows");
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let n_train = (ratios[0] * n as f64).floor() as usize;
    let n_val = (ratios[1] * n as f64).floor() as usize;
    let n_test = (ratios[2] * n as f64).floor() as usize;
    let n_train = n_train + (n - n_train - n_val - n_test);

    let train = dataset.subset(&indices[..n_train]);
    let val = dataset.subset(&indices[n_train..n_train + n_val]);
    let test = dataset.subset(&indices[n_train + n_val..n_train + n_val + n_test]);
    Ok((train, val, test))
}

/// Per-feature min/max statistics fitted on the training split only.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl ScalerParams {
    pub fn mins(&self) -> &[f64] {
        &self.mins
    }

    pub fn maxs(&self) -> &[f64] {
        &self.maxs
    }
}

pub fn fit_scaler(train: &Dataset) -> Result<ScalerParams> {
    if train.is_empty() {
        return Err(Error::Domain("cannot fit scaler on empty dataset".into()));
    }
    let cols = train.feature_dim();
    let mut mins = vec![f64::INFINITY; cols];
    let mut maxs = vec![f64::NEG_INFINITY; cols];
    for i in 0..train.len() {
        for (j, &v) in train.row(i).iter().enumerate() {
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    Ok(ScalerParams { mins, maxs })
}

/// Apply `(x - min) / (max - min)` per feature. Constant features map to 0.
/// Values outside the fitted range scale outside `[0, 1]`, which is allowed
/// for validation/test data.
pub fn apply_scaler(scaler: &ScalerParams, dataset: &Dataset) -> Result<Dataset> {
    if scaler.mins.len() != dataset.feature_dim() {
        return Err(Error::Shape(format!(
            "scaler fitted on {} features, dataset has {}",
            scaler.mins.len(),
            dataset.feature_dim()
        )));
    }
    let cols = dataset.feature_dim();
    let mut features = Vec::with_capacity(dataset.features().len());
    for i in 0..dataset.len() {
        for (j, &v) in dataset.row(i).iter().enumerate() {
            let range = scaler.maxs[j] - scaler.mins[j];
            if range == 0.0 {
                features.push(0.0);
            } else {
                features.push((v - scaler.mins[j]) / range);
            }
        }
    }
    Dataset::new(
        features,
        dataset.len(),
        cols,
        dataset.labels().to_vec(),
        dataset.class_count(),
        dataset.feature_names().map(|n| n.to_vec()),
    )
}

/// Per-client sampling fractions of the training split. Each client draws
/// `round(fraction·N)` rows independently with replacement, so fractions may
/// sum past 1.0 and shards may overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardSpec {
    pub fractions: Vec<f64>,
}

impl ShardSpec {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if fractions.iter().any(|&f| f <= 0.0 || !f.is_finite()) {
            return Err(Error::Domain("shard fractions must be positive".into()));
        }
        Ok(ShardSpec { fractions })
    }
}

pub fn shard(train: &Dataset, spec: &ShardSpec, seed: u64) -> Result<Vec<Dataset>> {
    if train.is_empty() && !spec.fractions.is_empty() {
        return Err(Error::Domain("cannot shard an empty training split".into()));
    }
    let n = train.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shards = Vec::with_capacity(spec.fractions.len());
    for &fraction in &spec.fractions {
        let size = (fraction * n as f64).round() as usize;
        let indices: Vec<usize> = (0..size).map(|_| rng.gen_range(0..n)).collect();
        shards.push(train.subset(&indices));
    }
    Ok(shards)
}

/// Parameters for the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub feature_dim: usize,
    pub class_count: usize,
    pub samples: usize,
    /// Standard deviation of each class blob. Class centers are drawn
    /// uniformly in the unit cube, so small spreads give separable classes.
    pub spread: f64,
}

impl SynthSpec {
    /// Mirror of the gas-pipeline dataset shape: 18 features, 8 classes.
    pub fn gas_like(samples: usize) -> Self {
        SynthSpec {
            feature_dim: 18,
            class_count: 8,
            samples,
            spread: 0.05,
        }
    }

    /// Mirror of the IIoT network-flow dataset shape: 41 features, 5 classes.
    pub fn wustl_like(samples: usize) -> Self {
        SynthSpec {
            feature_dim: 41,
            class_count: 5,
            samples,
            spread: 0.05,
        }
    }

    pub fn preset(name: &str, samples: usize) -> Result<Self> {
        match name {
            "gas-like" => Ok(Self::gas_like(samples)),
            "wustl-like" => Ok(Self::wustl_like(samples)),
            other => Err(Error::Config(format!(
                "unknown synthetic preset '{other}' (expected gas-like or wustl-like)"
            ))),
        }
    }
}

/// Generate a labeled Gaussian-blob dataset, deterministic per seed.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    if spec.feature_dim == 0 || spec.class_count == 0 {
        return Err(Error::Config(
            "synthetic feature_dim and class_count must be at least 1".into(),
        ));
    }
    if !(spec.spread.is_finite() && spec.spread >= 0.0) {
        return Err(Error::Config("synthetic spread must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..spec.class_count * spec.feature_dim)
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let noise = Normal::new(0.0, spec.spread.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("bad spread: {e}")))?;

    let mut features = Vec::with_capacity(spec.samples * spec.feature_dim);
    let mut labels = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let class = rng.gen_range(0..spec.class_count);
        let center = &centers[class * spec.feature_dim..(class + 1) * spec.feature_dim];
        for &c in center {
            features.push(c + noise.sample(&mut rng));
        }
        labels.push(class);
    }
    Dataset::new(
        features,
        spec.samples,
        spec.feature_dim,
        labels,
        spec.class_count,
        None,
    )
}
