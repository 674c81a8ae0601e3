//! Correlation-thresholded graph construction over windows of transactions.
//!
//! Nodes are the rows of a window; an edge appears where the absolute
//! leaky-rectified Pearson correlation of two rows' feature vectors clears
//! the threshold. The diagonal carries fixed self-loops so every node always
//! aggregates itself.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Pairwise Pearson correlations between node feature rows (`w × w`).
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub size: usize,
    pub values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }
}

/// Thresholded adjacency: entries are `0` or in `(threshold, 1]`, symmetric,
/// with unit diagonal.
#[derive(Debug, Clone)]
pub struct AdjacencyMatrix {
    pub size: usize,
    pub values: Vec<f64>,
    pub threshold: f64,
}

impl AdjacencyMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    /// Off-diagonal nonzero count.
    pub fn edge_count(&self) -> usize {
        let mut n = 0;
        for i in 0..self.size {
            for j in 0..self.size {
                if i != j && self.get(i, j) != 0.0 {
                    n += 1;
                }
            }
        }
        n
    }
}

/// One window as a graph: node features, adjacency, per-node sorted neighbor
/// lists (self excluded), and the active task's labels.
#[derive(Debug, Clone)]
pub struct SampleGraph {
    pub node_features: Vec<f64>,
    pub n_nodes: usize,
    pub n_features: usize,
    pub adjacency: AdjacencyMatrix,
    pub neighbor_lists: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl SampleGraph {
    pub fn feature_row(&self, v: usize) -> &[f64] {
        &self.node_features[v * self.n_features..(v + 1) * self.n_features]
    }
}

/// Pearson correlation of every pair of rows in `window × features`.
/// A zero-variance row correlates 0 with every other row and 1 with itself.
pub fn correlation_matrix(features: &[f64], w: usize, f: usize) -> Result<CorrelationMatrix> {
    if w < 2 || f < 2 {
        return Err(Error::Dimension(format!(
            "correlation needs at least 2 rows and 2 features, got {w}×{f}"
        )));
    }
    assert_eq!(features.len(), w * f);
    let mut means = vec![0.0; w];
    let mut stds = vec![0.0; w];
    for i in 0..w {
        let row = &features[i * f..(i + 1) * f];
        let m = row.iter().sum::<f64>() / f as f64;
        means[i] = m;
        stds[i] = (row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / f as f64).sqrt();
    }
    let mut values = vec![0.0; w * w];
    for i in 0..w {
        values[i * w + i] = 1.0;
        for j in (i + 1)..w {
            let c = if stds[i] > 0.0 && stds[j] > 0.0 {
                let mut cov = 0.0;
                for k in 0..f {
                    cov += (features[i * f + k] - means[i]) * (features[j * f + k] - means[j]);
                }
                cov /= f as f64;
                (cov / (stds[i] * stds[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            values[i * w + j] = c;
            values[j * w + i] = c;
        }
    }
    Ok(CorrelationMatrix { size: w, values })
}

/// `|leaky_relu(corr)|` pruned at `threshold`, diagonal forced to 1.
pub fn rectify_and_threshold(
    corr: &CorrelationMatrix,
    threshold: f64,
    leak_alpha: f64,
) -> Result<AdjacencyMatrix> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "threshold must be in [0, 1), got {threshold}"
        )));
    }
    if !(0.0..1.0).contains(&leak_alpha) {
        return Err(Error::Config(format!(
            "leak alpha must be in [0, 1), got {leak_alpha}"
        )));
    }
    let w = corr.size;
    let mut values = vec![0.0; w * w];
    for i in 0..w {
        for j in 0..w {
            if i == j {
                values[i * w + j] = 1.0;
                continue;
            }
            let c = corr.get(i, j);
            let rectified = if c >= 0.0 { c } else { leak_alpha * c };
            let a = rectified.abs();
            values[i * w + j] = if a > threshold { a } else { 0.0 };
        }
    }
    Ok(AdjacencyMatrix {
        size: w,
        values,
        threshold,
    })
}

/// Full construction for one window: correlation, rectify/threshold, and
/// neighbor lists.
pub fn build_graph(
    features: &[f64],
    w: usize,
    f: usize,
    labels: &[usize],
    threshold: f64,
    leak_alpha: f64,
) -> Result<SampleGraph> {
    if labels.len() != w {
        return Err(Error::Dimension(format!(
            "{} labels for {w} nodes",
            labels.len()
        )));
    }
    let corr = correlation_matrix(features, w, f)?;
    let adjacency = rectify_and_threshold(&corr, threshold, leak_alpha)?;
    let neighbor_lists = neighbor_lists(&adjacency);
    Ok(SampleGraph {
        node_features: features.to_vec(),
        n_nodes: w,
        n_features: f,
        adjacency,
        neighbor_lists,
        labels: labels.to_vec(),
    })
}

/// Sorted per-node neighbor lists from the nonzero off-diagonal entries.
pub fn neighbor_lists(adj: &AdjacencyMatrix) -> Vec<Vec<usize>> {
    let w = adj.size;
    (0..w)
        .map(|i| {
            (0..w)
                .filter(|&j| j != i && adj.get(i, j) != 0.0)
                .collect()
        })
        .collect()
}

/// Write one edge-list file per window (`src,dst,weight`) plus a JSON index,
/// for inspection and golden tests.
pub fn dump_graphs(graphs: &[SampleGraph], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = Vec::new();
    for (w, g) in graphs.iter().enumerate() {
        let file = format!("window_{w}.edges");
        let mut lines = String::new();
        for i in 0..g.n_nodes {
            for j in (i + 1)..g.n_nodes {
                let weight = g.adjacency.get(i, j);
                if weight != 0.0 {
                    lines.push_str(&format!("{i},{j},{weight:.6}\n"));
                }
            }
        }
        fs::write(dir.join(&file), lines)?;
        index.push(serde_json::json!({
            "id": w,
            "file": file,
            "nodes": g.n_nodes,
            "edges": g.adjacency.edge_count() / 2,
        }));
    }
    fs::write(
        dir.join("index.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "windows": index }))?,
    )?;
    Ok(())
}
