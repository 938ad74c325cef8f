//! Dataset loading, z-score standardisation and k-fold assignment.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const IDX_CLASSES: usize = 10;

/// Features are `[N × D]`. Labels are a single 0/1 column for two classes and
/// one-hot rows otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
    pub class_count: usize,
    /// Rows skipped while loading because of missing values.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Array2<f64>, classes: &[usize], class_count: usize) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Empty("dataset has no rows".into()));
        }
        if features.nrows() != classes.len() {
            return Err(Error::shape(format!("{} labels", features.nrows()), classes.len()));
        }
        if class_count < 2 {
            return Err(Error::Config("a classification dataset needs at least two classes".into()));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= class_count) {
            return Err(Error::Config(format!("class index {bad} out of range for {class_count} classes")));
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels: encode_labels(classes, class_count),
            class_count,
            dropped_rows: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.labels.ncols()
    }

    /// Class index of every row, decoded from the label encoding.
    pub fn class_indices(&self) -> Vec<usize> {
        decode_labels(self.labels.view())
    }

    pub fn select(&self, rows: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (self.features.select(Axis(0), rows), self.labels.select(Axis(0), rows))
    }

    /// Stacks the rows of `other` below `self`.
    pub fn concat(mut self, other: &Dataset) -> Result<Self> {
        if self.feature_dim() != other.feature_dim() || self.class_count != other.class_count {
            return Err(Error::shape(
                format!("{} features / {} classes", self.feature_dim(), self.class_count),
                format!("{} features / {} classes", other.feature_dim(), other.class_count),
            ));
        }
        self.features = concatenate![Axis(0), self.features, other.features];
        self.labels = concatenate![Axis(0), self.labels, other.labels];
        self.dropped_rows += other.dropped_rows;
        Ok(self)
    }
}

pub fn encode_labels(classes: &[usize], class_count: usize) -> Array2<f64> {
    if class_count == 2 {
        Array2::from_shape_fn((classes.len(), 1), |(i, _)| classes[i] as f64)
    } else {
        Array2::from_shape_fn((classes.len(), class_count), |(i, k)| if classes[i] == k { 1.0 } else { 0.0 })
    }
}

/// Single column: threshold at 0.5 (ties go to class 1). Several columns:
/// argmax, ties go to the lowest index.
pub fn decode_labels(encoded: ArrayView2<f64>) -> Vec<usize> {
    if encoded.ncols() == 1 {
        encoded.column(0).iter().map(|&v| usize::from(v >= 0.5)).collect()
    } else {
        encoded
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Which CSV column holds the class and how class names map to indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    pub classes: Vec<String>,
    #[serde(default)]
    pub ignore_columns: Vec<String>,
    #[serde(default = "default_missing")]
    pub missing_values: Vec<String>,
}

fn default_missing() -> Vec<String> {
    vec![String::new(), "?".into(), "NA".into()]
}

impl CsvSchema {
    pub fn new(label_column: impl Into<String>, classes: &[&str]) -> Self {
        CsvSchema {
            label_column: label_column.into(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
            ignore_columns: Vec::new(),
            missing_values: default_missing(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Reads a headered, comma-separated file. Rows containing a missing value
/// are dropped and counted in [`Dataset::dropped_rows`].
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == schema.label_column)
        .ok_or_else(|| Error::Config(format!("{}: no column named `{}`", path.display(), schema.label_column)))?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_idx && !schema.ignore_columns.iter().any(|c| c == &headers[i]))
        .collect();
    let class_of: HashMap<&str, usize> = schema.classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut values = Vec::new();
    let mut classes = Vec::new();
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_error(path, line, e))?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                path: path.into(),
                row: line,
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        if record.iter().any(|f| schema.missing_values.iter().any(|m| m == f)) {
            dropped += 1;
            continue;
        }
        let label = &record[label_idx];
        let class = *class_of.get(label).ok_or_else(|| Error::UnknownClass {
            path: path.into(),
            label: label.to_string(),
        })?;
        for &c in &feature_cols {
            let v: f64 = record[c].parse().map_err(|_| Error::Parse {
                path: path.into(),
                row: line,
                msg: format!("`{}` in column `{}` is not a number", &record[c], &headers[c]),
            })?;
            values.push(v);
        }
        classes.push(class);
    }
    if classes.is_empty() {
        return Err(Error::Empty(format!("{}: no usable rows", path.display())));
    }
    let features = Array2::from_shape_vec((classes.len(), feature_cols.len()), values).expect("row-major fill");
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut ds = Dataset::new(name, features, &classes, schema.classes.len())?;
    ds.dropped_rows = dropped;
    Ok(ds)
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.into(),
            row,
            msg: format!("{other:?}"),
        },
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn idx_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::IdxFormat {
        path: path.into(),
        msg: msg.into(),
    }
}

/// Reads an IDX image file (`0x00000803`) and its label file (`0x00000801`).
/// Pixels are kept as raw byte values.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    if img.len() < 16 {
        return Err(idx_err(images_path, "truncated header"));
    }
    let magic = be_u32(&img, 0);
    if magic != IDX_IMAGE_MAGIC {
        return Err(idx_err(images_path, format!("bad magic {magic:#010x}")));
    }
    let n = be_u32(&img, 4) as usize;
    let dim = be_u32(&img, 8) as usize * be_u32(&img, 12) as usize;
    if img.len() != 16 + n * dim {
        return Err(idx_err(
            images_path,
            format!("expected {} bytes of pixels, found {}", n * dim, img.len() - 16),
        ));
    }

    let lab = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    if lab.len() < 8 {
        return Err(idx_err(labels_path, "truncated header"));
    }
    let magic = be_u32(&lab, 0);
    if magic != IDX_LABEL_MAGIC {
        return Err(idx_err(labels_path, format!("bad magic {magic:#010x}")));
    }
    let n_labels = be_u32(&lab, 4) as usize;
    if n_labels != n {
        return Err(idx_err(labels_path, format!("{n_labels} labels for {n} images")));
    }
    if lab.len() != 8 + n {
        return Err(idx_err(labels_path, format!("expected {n} label bytes, found {}", lab.len() - 8)));
    }
    let classes: Vec<usize> = lab[8..].iter().map(|&b| b as usize).collect();
    if let Some(&bad) = classes.iter().find(|&&c| c >= IDX_CLASSES) {
        return Err(idx_err(labels_path, format!("label {bad} outside 0..{IDX_CLASSES}")));
    }
    let features = Array2::from_shape_vec((n, dim), img[16..].iter().map(|&b| b as f64).collect()).expect("sized above");
    let name = images_path
        .parent()
        .and_then(|p| p.file_name())
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, features, &classes, IDX_CLASSES)
}

/// Per-feature mean and population standard deviation of a training fold.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

/// Features whose deviation falls below this are mapped to zero.
pub const MIN_STD: f64 = 1e-12;

impl Standardizer {
    pub fn fit(train: ArrayView2<f64>) -> Result<Self> {
        if train.nrows() == 0 {
            return Err(Error::Empty("cannot standardise against an empty fold".into()));
        }
        let mean = train.mean_axis(Axis(0)).expect("non-empty");
        let std = train.std_axis(Axis(0), 0.0);
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::shape(format!("{} features", self.mean.len()), features.ncols()));
        }
        let mut out = features.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, sd) = (self.mean[j], self.std[j]);
            if sd < MIN_STD {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|x| (x - mu) / sd);
            }
        }
        Ok(out)
    }
}

/// Z-scores `apply_to` with statistics from `train`.
pub fn standardize(train: ArrayView2<f64>, apply_to: ArrayView2<f64>) -> Result<Array2<f64>> {
    Standardizer::fit(train)?.apply(apply_to)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_count: usize,
    pub seed: u64,
    /// Fold index of every observation.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle, then round-robin assignment to `k` folds.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 || n < k {
        return Err(Error::Config(format!("cannot split {n} observations into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; n];
    for (pos, &obs) in order.iter().enumerate() {
        assignments[obs] = pos % k;
    }
    Ok(FoldPlan {
        fold_count: k,
        seed,
        assignments,
    })
}
