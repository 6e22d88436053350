//! Tabular dataset ingestion, label encoding and stratified partitioning.
//!
//! Two on-disk formats are supported:
//!
//! * delimited text (RFC-4180 style) with one label column, see [`load_csv`];
//! * libsvm sparse lines `label idx:val idx:val ...` with 1-based, strictly
//!   increasing indices, see [`load_libsvm`]. Sparse input is densified.
//!
//! Labels are re-encoded densely to `0..K` in order of first appearance and
//! the original strings are kept in [`Dataset::class_names`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Dense feature matrix with integer class labels in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    class_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset and checks the ingestion invariants: finite features,
    /// labels in range, and every class represented at least once.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty);
        }
        if features.nrows() != labels.len() {
            return Err(Error::InvalidData(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(((row, col), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite feature value {v} at row {row}, column {col}"
            )));
        }
        let mut seen = vec![false; n_classes];
        for &y in &labels {
            if y >= n_classes {
                return Err(Error::InvalidData(format!(
                    "label {y} outside 0..{n_classes}"
                )));
            }
            seen[y] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidData(format!("class {missing} has no samples")));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_classes {
            return Err(Error::InvalidArgument(format!(
                "{} class names for {} classes",
                names.len(),
                self.n_classes
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.n_classes)
    }

    /// Re-encodes the labels against the class list `names`, e.g. to score a
    /// file with a trained model's classes. Classes of `names` that never
    /// occur are fine; a label outside `names` is an error.
    pub fn with_class_order(&self, names: &[String]) -> Result<Dataset> {
        let own = self.class_names.as_ref().ok_or_else(|| {
            Error::InvalidArgument("dataset has no class names to match".into())
        })?;
        let map = own
            .iter()
            .map(|n| {
                names.iter().position(|m| m == n).ok_or_else(|| {
                    Error::InvalidData(format!("class '{n}' is unknown to the model"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            features: self.features.clone(),
            labels: self.labels.iter().map(|&y| map[y]).collect(),
            n_classes: names.len(),
            class_names: Some(names.to_vec()),
        })
    }

    /// Row subset. The class count is inherited, so a subset may lack some
    /// classes (e.g. a small test split).
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            class_names: self.class_names.clone(),
        }
    }
}

pub(crate) fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// Encodes label strings to dense ids in order of first appearance.
#[derive(Debug, Default)]
struct LabelEncoder {
    ids: HashMap<String, usize>,
    names: Vec<String>,
}

impl LabelEncoder {
    fn encode(&mut self, raw: &str) -> usize {
        if let Some(&id) = self.ids.get(raw) {
            return id;
        }
        let id = self.names.len();
        self.ids.insert(raw.to_owned(), id);
        self.names.push(raw.to_owned());
        id
    }
}

/// A column addressed by header name or by 0-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Name(String),
    Index(usize),
    /// The last column of the file.
    Last,
}

impl Column {
    /// Parses a CLI-style column reference: `last`, a 0-based index, or a name.
    pub fn parse(s: &str) -> Column {
        if s.eq_ignore_ascii_case("last") {
            Column::Last
        } else if let Ok(i) = s.parse() {
            Column::Index(i)
        } else {
            Column::Name(s.to_owned())
        }
    }

    fn resolve(&self, header: Option<&[String]>, width: usize) -> Result<usize> {
        let found = match self {
            Column::Last => width.checked_sub(1),
            Column::Index(i) => (*i < width).then_some(*i),
            Column::Name(name) => header.and_then(|h| h.iter().position(|c| c.trim() == name)),
        };
        found.ok_or_else(|| Error::MissingLabelColumn(self.to_string()))
    }
}

impl std::fmt::Display for Column {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Column::Name(n) => write!(f, "'{n}'"),
            Column::Index(i) => write!(f, "#{i}"),
            Column::Last => write!(f, "last"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub label_column: Column,
    pub has_header: bool,
    pub delimiter: u8,
    /// Columns removed before feature extraction (e.g. sample ids).
    pub drop_columns: Vec<Column>,
    /// Replace missing cells with the column mean instead of rejecting them.
    pub impute_missing: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: Column::Last,
            has_header: true,
            delimiter: b',',
            drop_columns: Vec::new(),
            impute_missing: false,
        }
    }
}

const MISSING_MARKERS: [&str; 5] = ["", "?", "NA", "NaN", "nan"];

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, opts)
}

/// Reads a delimited table. Row numbers in errors are 1-based data rows
/// (the header, if any, is not counted); columns are 0-based file columns.
pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<Dataset> {
    let (features, labels) = read_table(reader, opts, true)?;
    let (labels, names) = labels.expect("labels were requested");
    let n_classes = names.len();
    Dataset::new(features, labels, n_classes)?.with_class_names(names)
}

/// Loads a feature matrix without a label column; `label_column` is ignored
/// and `drop_columns` still apply.
pub fn load_csv_features(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_features(file, opts)
}

pub fn read_csv_features<R: Read>(reader: R, opts: &CsvOptions) -> Result<Array2<f64>> {
    Ok(read_table(reader, opts, false)?.0)
}

type EncodedLabels = (Vec<usize>, Vec<String>);

fn read_table<R: Read>(
    reader: R,
    opts: &CsvOptions,
    with_label: bool,
) -> Result<(Array2<f64>, Option<EncodedLabels>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .delimiter(opts.delimiter)
        .flexible(false)
        .from_reader(reader);

    let header: Option<Vec<String>> = if opts.has_header {
        let h = rdr.headers().map_err(|e| csv_error(e, 0))?;
        Some(h.iter().map(str::to_owned).collect())
    } else {
        None
    };

    let mut encoder = LabelEncoder::default();
    let mut labels = Vec::new();
    let mut cells: Vec<f64> = Vec::new();
    let mut n_rows = 0;
    let mut layout: Option<(Option<usize>, Vec<usize>)> = None;

    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_error(e, row + 1))?;
        let (label_col, feature_cols) = match &layout {
            Some(l) => l,
            None => {
                let width = record.len();
                let label_col = if with_label {
                    Some(opts.label_column.resolve(header.as_deref(), width)?)
                } else {
                    None
                };
                let mut dropped: Vec<usize> = label_col.into_iter().collect();
                for c in &opts.drop_columns {
                    dropped.push(c.resolve(header.as_deref(), width)?);
                }
                let feature_cols = (0..width).filter(|c| !dropped.contains(c)).collect();
                layout.insert((label_col, feature_cols))
            }
        };
        if let Some(c) = label_col {
            labels.push(encoder.encode(record[*c].trim()));
        }
        n_rows += 1;
        for &c in feature_cols.iter() {
            let raw = record[c].trim();
            let value = if MISSING_MARKERS.contains(&raw) {
                if !opts.impute_missing {
                    return Err(Error::Parse {
                        row: row + 1,
                        column: c,
                        message: format!("missing value '{raw}'"),
                    });
                }
                f64::NAN
            } else {
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        return Err(Error::Parse {
                            row: row + 1,
                            column: c,
                            message: format!("non-numeric feature cell '{raw}'"),
                        })
                    }
                }
            };
            cells.push(value);
        }
    }

    let Some((_, feature_cols)) = layout else {
        return Err(Error::Empty);
    };
    let mut features = Array2::from_shape_vec((n_rows, feature_cols.len()), cells)
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    if opts.impute_missing {
        impute_column_means(&mut features)?;
    }
    Ok((features, with_label.then_some((labels, encoder.names))))
}

fn csv_error(e: csv::Error, row: usize) -> Error {
    let row = e
        .position()
        .map(|p| p.record() as usize)
        .unwrap_or(row);
    Error::Parse {
        row,
        column: 0,
        message: e.to_string(),
    }
}

fn impute_column_means(features: &mut Array2<f64>) -> Result<()> {
    for (c, mut col) in features.axis_iter_mut(Axis(1)).enumerate() {
        let (sum, n) = col
            .iter()
            .filter(|v| !v.is_nan())
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            return Err(Error::InvalidData(format!(
                "column {c} has no observed values to impute from"
            )));
        }
        let mean = sum / n as f64;
        col.iter_mut().filter(|v| v.is_nan()).for_each(|v| *v = mean);
    }
    Ok(())
}

/// Result of sparse ingestion: the densified dataset and its zero fraction.
#[derive(Debug, Clone)]
pub struct SparseLoad {
    pub dataset: Dataset,
    /// Fraction of cells in the dense matrix that are exactly zero.
    pub sparsity: f64,
}

pub fn load_libsvm(path: impl AsRef<Path>, dim: Option<usize>) -> Result<SparseLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_libsvm(BufReader::new(file), dim)
}

pub fn read_libsvm<R: BufRead>(reader: R, dim: Option<usize>) -> Result<SparseLoad> {
    let mut encoder = LabelEncoder::default();
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let row = lineno + 1;
        let line = line.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label = tokens.next().expect("non-empty line has a token");
        labels.push(encoder.encode(label));

        let mut entries = Vec::new();
        let mut prev = 0usize;
        for (t, token) in tokens.enumerate() {
            let column = t + 1;
            let bad = |message: String| Error::Parse {
                row,
                column,
                message,
            };
            let (idx, val) = token
                .split_once(':')
                .ok_or_else(|| bad(format!("expected idx:val, got '{token}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| bad(format!("bad index '{idx}'")))?;
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| bad(format!("bad value '{val}'")))?;
            if idx == 0 {
                return Err(bad("indices are 1-based".into()));
            }
            if idx <= prev {
                return Err(bad(format!("index {idx} not increasing (previous {prev})")));
            }
            if let Some(d) = dim {
                if idx > d {
                    return Err(bad(format!("index {idx} exceeds dimension {d}")));
                }
            }
            prev = idx;
            max_index = max_index.max(idx);
            entries.push((idx - 1, val));
        }
        rows.push(entries);
    }

    if rows.is_empty() {
        return Err(Error::Empty);
    }
    let d = dim.unwrap_or(max_index);
    let mut features = Array2::zeros((rows.len(), d));
    for (i, entries) in rows.iter().enumerate() {
        for &(j, v) in entries {
            features[[i, j]] = v;
        }
    }
    let total = (rows.len() * d).max(1);
    let zeros = features.iter().filter(|&&v| v == 0.0).count();
    let sparsity = if d == 0 { 1.0 } else { zeros as f64 / total as f64 };
    let n_classes = encoder.names.len();
    let dataset = Dataset::new(features, labels, n_classes)?.with_class_names(encoder.names)?;
    Ok(SparseLoad { dataset, sparsity })
}

fn per_class_rows(labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    by_class
}

/// Index form of [`stratified_split`]: `(train_rows, test_rows)`, each sorted.
pub fn stratified_split_indices(
    labels: &[usize],
    n_classes: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} not in (0, 1)"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::with_capacity(labels.len());
    let mut test = Vec::new();
    for (class, mut rows) in per_class_rows(labels, n_classes).into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let n_test = (rows.len() as f64 * test_fraction).round() as usize;
        if n_test >= rows.len() {
            return Err(Error::InvalidArgument(format!(
                "test fraction {test_fraction} leaves class {class} ({} samples) empty in train",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Per-class stratified train/test split; each class contributes
/// `round(m_c * test_fraction)` samples to the test side.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = stratified_split_indices(ds.labels(), ds.n_classes(), test_fraction, seed)?;
    Ok((ds.select(&train), ds.select(&test)))
}

/// Assignment of every sample to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    fold_of: Vec<usize>,
    seed: u64,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn n_samples(&self) -> usize {
        self.fold_of.len()
    }

    /// Rows held out in `fold`.
    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    /// Rows used for training when `fold` is held out.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }
}

/// Stratified k-fold assignment. Within each class the shuffled samples are
/// dealt round-robin, continuing the rotation across classes so that fold
/// totals stay balanced as well.
pub fn stratified_kfold(
    labels: &[usize],
    n_classes: usize,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}, need at least 2 folds")));
    }
    let mut rng = rng_from_seed(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut offset = 0;
    for (class, mut rows) in per_class_rows(labels, n_classes).into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < k {
            return Err(Error::InvalidData(format!(
                "class {class} has {} samples, fewer than k = {k}",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        for (j, &i) in rows.iter().enumerate() {
            fold_of[i] = (offset + j) % k;
        }
        offset = (offset + rows.len()) % k;
    }
    Ok(FoldAssignment { k, fold_of, seed })
}
