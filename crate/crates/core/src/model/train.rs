//! K-fold training of the hybrid model and the full experiment pipeline.

use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::preprocess::{balance_classes, window_partition, Scaler, WindowSet};
use crate::data::schema::DatasetSchema;
use crate::data::table::{encode_categoricals, load_dataset, RawTable};
use crate::data::to_feature_matrix;
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::{build_graph, SampleGraph};
use crate::model::build::{HeadOutputs, HybridModel};
use crate::model::config::{CombineMode, TrainConfig};
use crate::report::metrics::{confusion, metrics_from_confusion, ConfusionMatrix};
use crate::report::render::{ExperimentReport, FoldReport, LayerEmbeddings};
use crate::tensor::adam::AdamState;
use crate::tensor::tape::{Tape, TensorId};

/// Disjoint window-index folds covering every window exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
}

/// Seeded shuffle then contiguous partition; fold sizes differ by at most 1.
pub fn kfold_split(n_windows: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Config("k-fold needs k >= 2".into()));
    }
    if n_windows < k {
        return Err(Error::Config(format!(
            "cannot split {n_windows} windows into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_windows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = n_windows / k;
    let extra = n_windows % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[at..at + size].to_vec());
        at += size;
    }
    Ok(FoldSplit { folds })
}

/// Per-epoch training curves. Wall-clock seconds stay out of serialized
/// reports; they are written to the history CSV sidecars only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub total_loss: Vec<f64>,
    pub graph_loss: Vec<f64>,
    pub conv_loss: Vec<f64>,
    pub lstm_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub val_acc: Vec<f64>,
    #[serde(skip_serializing, default)]
    pub seconds: Vec<f64>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.total_loss.len()
    }
}

/// Weighted sum of the per-head cross-entropies. Returns the scalar loss
/// tensor plus the raw (unweighted) per-head values for reporting.
pub fn total_loss(
    tape: &mut Tape,
    targets: &Rc<Vec<usize>>,
    heads: &HeadOutputs,
    weights: [f64; 3],
) -> Result<(TensorId, [f64; 3])> {
    let ce_graph = tape.cross_entropy(heads.graph, targets.clone())?;
    let mut values = [tape.data(ce_graph)[0], 0.0, 0.0];
    let mut loss = tape.scale(ce_graph, weights[0]);
    if let Some(conv) = heads.conv {
        let ce = tape.cross_entropy(conv, targets.clone())?;
        values[1] = tape.data(ce)[0];
        let weighted = tape.scale(ce, weights[1]);
        loss = tape.add(loss, weighted)?;
    }
    if let Some(lstm) = heads.lstm {
        let ce = tape.cross_entropy(lstm, targets.clone())?;
        values[2] = tape.data(ce)[0];
        let weighted = tape.scale(ce, weights[2]);
        loss = tape.add(loss, weighted)?;
    }
    Ok((loss, values))
}

/// Element-wise combination of the heads' log-probabilities.
pub fn combine_log_probs(tape: &Tape, heads: &HeadOutputs, combiner: CombineMode) -> Vec<f64> {
    let graph = tape.data(heads.graph);
    match combiner {
        CombineMode::GraphOnly => graph.to_vec(),
        CombineMode::MeanHeads => {
            let mut sum = graph.to_vec();
            let mut count = 1.0;
            for head in [heads.conv, heads.lstm].into_iter().flatten() {
                for (s, v) in sum.iter_mut().zip(tape.data(head)) {
                    *s += v;
                }
                count += 1.0;
            }
            sum.iter_mut().for_each(|v| *v /= count);
            sum
        }
    }
}

/// Row-wise argmax with ties resolved to the smallest class index.
pub fn argmax_rows(log_probs: &[f64], n_classes: usize) -> Vec<usize> {
    log_probs
        .chunks(n_classes)
        .map(|row| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Balanced, windowed, unscaled task data ready for fold training.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub matrix: FeatureMatrix,
    pub labels: Vec<usize>,
    pub windows: WindowSet,
    pub n_classes: usize,
    pub n_features: usize,
    pub classes: Vec<String>,
    pub rows_before_balance: usize,
}

/// Encode, extract the task target, balance classes (row order preserved),
/// and partition into windows. Scaling happens per fold.
pub fn prepare_task(config: &TrainConfig, schema: &DatasetSchema, table: &RawTable) -> Result<TaskData> {
    let task = schema.task(&config.task_id)?;
    let encoded = encode_categoricals(table, schema)?;
    let matrix = to_feature_matrix(&encoded, schema, &config.task_id)?;
    let labels_all = matrix.labels(&task.task_id)?.to_vec();
    let rows_before = matrix.n_rows;
    let retained = balance_classes(&labels_all, task.n_classes(), config.seed)?;
    let matrix = matrix.select_rows(&retained);
    let labels = matrix.labels(&task.task_id)?.to_vec();
    let windows = window_partition(matrix.n_rows, config.window_size)?;
    let n_features = matrix.n_cols;
    Ok(TaskData {
        matrix,
        labels,
        windows,
        n_classes: task.n_classes(),
        n_features,
        classes: task.classes.clone(),
        rows_before_balance: rows_before,
    })
}

/// Fit the scaler on the training windows' rows only, then build every
/// window's graph from the scaled features.
pub fn fold_graphs(
    data: &TaskData,
    config: &TrainConfig,
    train_windows: &[usize],
) -> Result<Vec<SampleGraph>> {
    let train_rows: Vec<usize> = train_windows
        .iter()
        .flat_map(|&w| data.windows.windows[w].clone())
        .collect();
    let scaler = Scaler::fit_rows(&data.matrix, &train_rows)?;
    let scaled = scaler.transform(&data.matrix);
    data.windows
        .windows
        .iter()
        .map(|range| {
            let w = range.len();
            let mut features = Vec::with_capacity(w * data.n_features);
            for i in range.clone() {
                features.extend_from_slice(scaled.row(i));
            }
            let labels = &data.labels[range.start..range.end];
            build_graph(
                &features,
                w,
                data.n_features,
                labels,
                config.threshold,
                config.leak_alpha,
            )
        })
        .collect()
}

/// Outcome of one fold: the best-validation model, its history, and the
/// held-out predictions.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub model: HybridModel,
    pub adam: AdamState,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub test_labels: Vec<usize>,
    pub test_preds: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub embeddings: Option<Vec<LayerEmbeddings>>,
}

fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x51_7c_c1_b7_27_22_0a_95;
    for &p in parts {
        h ^= p.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(31);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9) ^ (h >> 27);
    }
    h
}

pub(crate) fn check_finite_loss(value: f64, fold: usize, epoch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingAbort {
            fold,
            epoch,
            reason: format!("non-finite loss {value}"),
        })
    }
}

/// Evaluate accuracy of the combined heads over a set of windows (eval mode).
fn evaluate_windows(
    model: &mut HybridModel,
    graphs: &[SampleGraph],
    windows: &[usize],
    combiner: CombineMode,
) -> Result<(f64, Vec<usize>, Vec<usize>)> {
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for &w in windows {
        let graph = &graphs[w];
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, false);
        let heads = model.forward_heads(&mut tape, graph, &bound, false, 0)?;
        let combined = combine_log_probs(&tape, &heads, combiner);
        let p = argmax_rows(&combined, model.n_classes);
        for (pred, &truth) in p.iter().zip(&graph.labels) {
            if *pred == truth {
                correct += 1;
            }
            total += 1;
        }
        preds.extend(p);
        labels.extend_from_slice(&graph.labels);
    }
    let acc = if total > 0 {
        100.0 * correct as f64 / total as f64
    } else {
        0.0
    };
    Ok((acc, preds, labels))
}

/// Train one fold: per epoch the training windows are shuffled and each
/// window takes one full-batch Adam step; the returned model carries the
/// parameters of the best validation epoch.
pub fn train_fold(
    config: &TrainConfig,
    data: &TaskData,
    graphs: &[SampleGraph],
    fold: usize,
    train_windows: &[usize],
    val_windows: &[usize],
) -> Result<FoldOutcome> {
    let mut model = HybridModel::build(
        config,
        data.n_features,
        data.n_classes,
        derive_seed(config.seed, &[fold as u64, 0xbead]),
    )?;
    let mut adam = AdamState::new(&model.params, config.lr_graph, config.lr_seq, config.weight_decay);
    adam.grad_clip = config.grad_clip;

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, HybridModel)> = None;
    let mut order: Vec<usize> = train_windows.to_vec();

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[fold as u64, epoch as u64, 0x5f]));
        order.shuffle(&mut rng);

        let mut sums = [0.0f64; 4]; // total, graph, conv, lstm
        let mut correct = 0usize;
        let mut seen = 0usize;
        for &w in &order {
            let graph = &graphs[w];
            let targets = Rc::new(graph.labels.clone());
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape, true);
            let perm_seed = derive_seed(config.seed, &[fold as u64, epoch as u64, w as u64]);
            let heads = model.forward_heads(&mut tape, graph, &bound, true, perm_seed)?;
            let (loss, head_values) = total_loss(&mut tape, &targets, &heads, config.loss_weights)?;
            let loss_value = tape.data(loss)[0];
            check_finite_loss(loss_value, fold, epoch)?;

            let combined = combine_log_probs(&tape, &heads, config.combiner);
            for (pred, &truth) in argmax_rows(&combined, model.n_classes).iter().zip(&graph.labels) {
                if *pred == truth {
                    correct += 1;
                }
                seen += 1;
            }

            tape.backward(loss)?;
            let mut grads = model.params.collect_grads(&tape, &bound);
            adam.step(&mut model.params, &mut grads);

            sums[0] += loss_value;
            sums[1] += head_values[0];
            sums[2] += head_values[1];
            sums[3] += head_values[2];
        }
        let n = order.len().max(1) as f64;
        let train_acc = if seen > 0 { 100.0 * correct as f64 / seen as f64 } else { 0.0 };
        let (val_acc, _, _) = evaluate_windows(&mut model, graphs, val_windows, config.combiner)?;

        history.total_loss.push(sums[0] / n);
        history.graph_loss.push(sums[1] / n);
        history.conv_loss.push(sums[2] / n);
        history.lstm_loss.push(sums[3] / n);
        history.train_acc.push(train_acc);
        history.val_acc.push(val_acc);
        history.seconds.push(start.elapsed().as_secs_f64());

        if best.as_ref().map(|(acc, _, _)| val_acc > *acc).unwrap_or(true) {
            best = Some((val_acc, epoch, model.clone()));
        }
    }

    let (_, best_epoch, mut model) = best.expect("at least one epoch ran");
    let (_, test_preds, test_labels) =
        evaluate_windows(&mut model, graphs, val_windows, config.combiner)?;
    let cm = confusion(&test_preds, &test_labels, data.n_classes)?;

    let embeddings = if config.export_embeddings {
        Some(collect_embeddings(&mut model, graphs, val_windows)?)
    } else {
        None
    };

    Ok(FoldOutcome {
        fold,
        model,
        adam,
        history,
        best_epoch,
        test_labels,
        test_preds,
        confusion: cm,
        embeddings,
    })
}

fn collect_embeddings(
    model: &mut HybridModel,
    graphs: &[SampleGraph],
    windows: &[usize],
) -> Result<Vec<LayerEmbeddings>> {
    let n_layers = model.dims.len();
    let mut out: Vec<LayerEmbeddings> = (0..n_layers)
        .map(|layer| LayerEmbeddings {
            layer,
            dim: 0,
            labels: Vec::new(),
            rows: Vec::new(),
        })
        .collect();
    for &w in windows {
        let graph = &graphs[w];
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, false);
        let per_layer = model.stack_forward(&mut tape, graph, &bound, false, 0)?;
        for (layer, id) in per_layer.iter().enumerate() {
            let (_, dim) = tape.shape(*id);
            out[layer].dim = dim;
            out[layer].labels.extend_from_slice(&graph.labels);
            out[layer].rows.extend_from_slice(tape.data(*id));
        }
    }
    Ok(out)
}

/// Class predictions and combined log-probabilities for one graph.
pub fn predict(
    model: &mut HybridModel,
    graph: &SampleGraph,
    combiner: CombineMode,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false);
    let heads = model.forward_heads(&mut tape, graph, &bound, false, 0)?;
    let combined = combine_log_probs(&tape, &heads, combiner);
    let preds = argmax_rows(&combined, model.n_classes);
    Ok((preds, combined))
}

/// A finished experiment: the serializable report plus the per-fold models
/// (for checkpointing).
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub models: Vec<HybridModel>,
    pub optimizers: Vec<AdamState>,
}

/// Full pipeline from a CSV file.
pub fn run_experiment(config: &TrainConfig, csv_path: &Path) -> Result<ExperimentRun> {
    let schema = DatasetSchema::builtin(config.dataset_id);
    let table = load_dataset(csv_path, &schema)?;
    run_experiment_on_table(config, &schema, &table)
}

/// Full pipeline from an already-loaded table: balance, window, split into
/// folds, train each fold, and aggregate. Every window is evaluated exactly
/// once as test.
pub fn run_experiment_on_table(
    config: &TrainConfig,
    schema: &DatasetSchema,
    table: &RawTable,
) -> Result<ExperimentRun> {
    config.validate()?;
    let data = prepare_task(config, schema, table)?;
    let n_windows = data.windows.windows.len();
    let split = kfold_split(n_windows, config.k_folds, config.seed)?;

    let run_one = |fold: usize| -> Result<FoldOutcome> {
        let val = &split.folds[fold];
        let train: Vec<usize> = (0..n_windows).filter(|w| !val.contains(w)).collect();
        let graphs = fold_graphs(&data, config, &train)?;
        train_fold(config, &data, &graphs, fold, &train, val)
    };

    let outcomes: Vec<Result<FoldOutcome>> = if config.parallel_folds > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallel_folds.min(config.k_folds))
            .build()
            .map_err(|e| Error::Config(format!("cannot build fold thread pool: {e}")))?;
        pool.install(|| (0..config.k_folds).into_par_iter().map(run_one).collect())
    } else {
        (0..config.k_folds).map(run_one).collect()
    };

    let mut folds = Vec::with_capacity(config.k_folds);
    let mut models = Vec::with_capacity(config.k_folds);
    let mut optimizers = Vec::with_capacity(config.k_folds);
    let mut aggregate_cm = ConfusionMatrix::zeros(data.n_classes);
    let mut embeddings: Option<Vec<LayerEmbeddings>> = None;
    for outcome in outcomes {
        let o = outcome?;
        aggregate_cm.merge(&o.confusion);
        if let Some(fold_emb) = &o.embeddings {
            match &mut embeddings {
                None => embeddings = Some(fold_emb.clone()),
                Some(agg) => {
                    for (a, f) in agg.iter_mut().zip(fold_emb) {
                        a.labels.extend_from_slice(&f.labels);
                        a.rows.extend_from_slice(&f.rows);
                    }
                }
            }
        }
        folds.push(FoldReport {
            fold: o.fold,
            best_epoch: o.best_epoch,
            metrics: metrics_from_confusion(&o.confusion)?,
            confusion: o.confusion.clone(),
            history: o.history.clone(),
        });
        models.push(o.model);
        optimizers.push(o.adam);
    }
    let aggregate = metrics_from_confusion(&aggregate_cm)?;
    let report = ExperimentReport {
        config: config.clone(),
        task_classes: data.classes.clone(),
        n_rows_used: data.matrix.n_rows,
        n_windows,
        folds,
        aggregate,
        aggregate_confusion: aggregate_cm,
        embeddings,
    };
    Ok(ExperimentRun {
        report,
        models,
        optimizers,
    })
}
