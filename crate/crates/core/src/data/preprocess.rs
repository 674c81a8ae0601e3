//! Class balancing, standard scaling, and window partitioning.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::schema::{normalize_name, DatasetSchema};
use crate::data::table::{Cell, RawTable};
use crate::error::{Error, Result};

/// Numeric sample×feature matrix with column metadata, per-task labels, and
/// (once fitted) the scaler that produced it.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub n_rows: usize,
    pub n_cols: usize,
    pub column_names: Vec<String>,
    pub scaler: Option<Scaler>,
    pub labels_per_task: BTreeMap<String, Vec<usize>>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn labels(&self, task_id: &str) -> Result<&[usize]> {
        self.labels_per_task
            .get(task_id)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Config(format!("no labels extracted for task '{task_id}'")))
    }

    /// Keep only the given rows (ascending order preserved).
    pub fn select_rows(&self, keep: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(keep.len() * self.n_cols);
        for &i in keep {
            values.extend_from_slice(self.row(i));
        }
        let labels_per_task = self
            .labels_per_task
            .iter()
            .map(|(k, v)| (k.clone(), keep.iter().map(|&i| v[i]).collect()))
            .collect();
        FeatureMatrix {
            values,
            n_rows: keep.len(),
            n_cols: self.n_cols,
            column_names: self.column_names.clone(),
            scaler: self.scaler.clone(),
            labels_per_task,
        }
    }
}

/// Build the numeric matrix from an encoded table. When the active task's
/// target column is also a feature it is excluded from the value columns so
/// the label never leaks into the inputs.
pub fn to_feature_matrix(
    table: &RawTable,
    schema: &DatasetSchema,
    active_task: &str,
) -> Result<FeatureMatrix> {
    let task = schema.task(active_task)?;
    let excluded = normalize_name(&task.column);
    let mut col_idx = Vec::new();
    let mut column_names = Vec::new();
    for spec in &schema.features {
        if normalize_name(&spec.name) == excluded {
            log::info!(
                "excluding feature column '{}' (target of task '{}')",
                spec.name,
                task.task_id
            );
            continue;
        }
        let idx = table.column_index(&spec.name).ok_or_else(|| {
            Error::Schema(format!("feature column '{}' missing from table", spec.name))
        })?;
        col_idx.push(idx);
        column_names.push(spec.name.clone());
    }
    let n_rows = table.row_count();
    let n_cols = col_idx.len();
    let mut values = Vec::with_capacity(n_rows * n_cols);
    for row in &table.rows {
        for &c in &col_idx {
            match &row[c] {
                Cell::Num(v) => values.push(*v),
                Cell::Text(t) => {
                    return Err(Error::Schema(format!(
                        "column '{}' still holds text '{t}'; encode categoricals first",
                        table.column_names[c]
                    )))
                }
            }
        }
    }
    let mut labels_per_task = BTreeMap::new();
    for t in &schema.tasks {
        let labels = crate::data::table::extract_target(table, schema, &t.task_id)?;
        labels_per_task.insert(t.task_id.clone(), labels);
    }
    Ok(FeatureMatrix {
        values,
        n_rows,
        n_cols,
        column_names,
        scaler: None,
        labels_per_task,
    })
}

/// Per-column standardization parameters (population statistics). A constant
/// column keeps `std = 0` and maps to zeros on transform.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fit on a subset of rows — the training rows of a fold — so held-out
    /// statistics never leak into the transform.
    pub fn fit_rows(matrix: &FeatureMatrix, rows: &[usize]) -> Result<Scaler> {
        if rows.len() < 2 {
            return Err(Error::Config(format!(
                "standard scaling needs at least 2 samples, got {}",
                rows.len()
            )));
        }
        let n = rows.len() as f64;
        let c = matrix.n_cols;
        let mut mean = vec![0.0; c];
        for &i in rows {
            for (j, v) in matrix.row(i).iter().enumerate() {
                mean[j] += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; c];
        for &i in rows {
            for (j, v) in matrix.row(i).iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt()).collect();
        Ok(Scaler { mean, std })
    }

    pub fn fit(matrix: &FeatureMatrix) -> Result<Scaler> {
        let rows: Vec<usize> = (0..matrix.n_rows).collect();
        Self::fit_rows(matrix, &rows)
    }

    /// Apply to every row of `matrix`, returning a new matrix that carries
    /// this scaler.
    pub fn transform(&self, matrix: &FeatureMatrix) -> FeatureMatrix {
        let c = matrix.n_cols;
        assert_eq!(self.mean.len(), c, "scaler fitted on a different width");
        let mut values = Vec::with_capacity(matrix.values.len());
        for i in 0..matrix.n_rows {
            for (j, v) in matrix.row(i).iter().enumerate() {
                if self.std[j] > 0.0 {
                    values.push((v - self.mean[j]) / self.std[j]);
                } else {
                    values.push(0.0);
                }
            }
        }
        FeatureMatrix {
            values,
            n_rows: matrix.n_rows,
            n_cols: c,
            column_names: matrix.column_names.clone(),
            scaler: Some(self.clone()),
            labels_per_task: matrix.labels_per_task.clone(),
        }
    }
}

/// Fit-and-transform over all rows of the matrix, storing the scaler.
pub fn standard_scale(matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    let scaler = Scaler::fit(matrix)?;
    Ok(scaler.transform(matrix))
}

/// Subsample every class down to the minimum class count with a seeded
/// uniform choice, preserving row order. Returns ascending retained indices.
pub fn balance_classes(labels: &[usize], n_classes: usize, seed: u64) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(Error::Config("balancing needs at least 2 classes".into()));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::Config(format!(
                "label {l} out of range for {n_classes} classes"
            )));
        }
        per_class[l].push(i);
    }
    if let Some(empty) = per_class.iter().position(|v| v.is_empty()) {
        return Err(Error::Config(format!(
            "class {empty} has zero samples; cannot balance"
        )));
    }
    let min_count = per_class.iter().map(|v| v.len()).min().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut retained = Vec::with_capacity(min_count * n_classes);
    for indices in &per_class {
        let mut pool = indices.clone();
        pool.shuffle(&mut rng);
        retained.extend_from_slice(&pool[..min_count]);
    }
    retained.sort_unstable();
    Ok(retained)
}

/// Disjoint contiguous windows over the retained row sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSet {
    pub window_size: usize,
    pub windows: Vec<Range<usize>>,
    /// Trailing rows that did not fill a window and were dropped.
    pub dropped_rows: usize,
}

/// Partition `n_samples` rows into `floor(n / window_size)` full windows;
/// the remainder is dropped rather than padded.
pub fn window_partition(n_samples: usize, window_size: usize) -> Result<WindowSet> {
    if window_size < 2 {
        return Err(Error::Config(format!(
            "window size must be at least 2, got {window_size}"
        )));
    }
    if window_size > n_samples {
        return Err(Error::Config(format!(
            "window size {window_size} exceeds sample count {n_samples}"
        )));
    }
    let full = n_samples / window_size;
    let windows = (0..full)
        .map(|w| w * window_size..(w + 1) * window_size)
        .collect();
    Ok(WindowSet {
        window_size,
        windows,
        dropped_rows: n_samples - full * window_size,
    })
}
