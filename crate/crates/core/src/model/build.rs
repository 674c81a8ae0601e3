//! Assembly of the hybrid model from a configuration.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::branches::conv::ConvBranch;
use crate::branches::lstm::LstmBranch;
use crate::error::{Error, Result};
use crate::graph::SampleGraph;
use crate::layers::gat::{GatLayer, HeadCombine};
use crate::layers::norm::BatchNorm;
use crate::layers::sage::{NormLayer, SageLayer};
use crate::model::config::{TrainConfig, Variant};
use crate::tensor::checkpoint;
use crate::tensor::params::{ParamGroup, ParamId, ParamSet};
use crate::tensor::tape::{Tape, TensorId};
use rand::SeedableRng;

/// How a dataset's stack widths evolve, following that dataset's published
/// per-layer exemplar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimPattern {
    /// Narrow from the feature count toward the class count
    /// (`8 -> 8 -> 5 -> 3 -> 3` for 8 features and 3 classes).
    Narrowing,
    /// Keep every layer at the feature width (`10 -> 10 -> 10 -> 10`);
    /// the classification head does the projection.
    Preserving,
}

impl DimPattern {
    /// The smart-logistics exemplar preserves its width; the others narrow.
    pub fn for_dataset(id: crate::data::schema::DatasetId) -> DimPattern {
        match id {
            crate::data::schema::DatasetId::SmartLogistics => DimPattern::Preserving,
            _ => DimPattern::Narrowing,
        }
    }
}

/// Per-layer output dims for a stack of `layers` over `f` features and `c`
/// classes. Narrowing stacks hold one dimension-preserving layer, one mid
/// layer, then the class width; four layers over 8 features and 3 classes
/// give `[8, 5, 3, 3]`.
pub fn stack_dims(f: usize, c: usize, layers: usize, pattern: DimPattern) -> Result<Vec<usize>> {
    if layers < 2 {
        return Err(Error::Config("graph stack needs at least 2 layers".into()));
    }
    if pattern == DimPattern::Preserving {
        return Ok(vec![f; layers]);
    }
    let mid = (f + c) / 2;
    Ok(match layers {
        2 => vec![f, c],
        3 => vec![f, mid, c],
        n => {
            let mut dims = vec![f; n - 3];
            dims.push(mid);
            dims.push(c);
            dims.push(c);
            dims
        }
    })
}

#[derive(Debug, Clone)]
pub enum GraphStack {
    Sage(Vec<SageLayer>),
    Gat(Vec<GatLayer>),
}

impl GraphStack {
    pub fn len(&self) -> usize {
        match self {
            GraphStack::Sage(v) => v.len(),
            GraphStack::Gat(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-head log-probability outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutputs {
    pub graph: TensorId,
    pub conv: Option<TensorId>,
    pub lstm: Option<TensorId>,
}

/// The three-branch network. Non-hybrid variants carry only the graph stack
/// and its head.
#[derive(Debug, Clone)]
pub struct HybridModel {
    pub variant: Variant,
    pub n_features: usize,
    pub n_classes: usize,
    pub dims: Vec<usize>,
    pub params: ParamSet,
    pub stack: GraphStack,
    pub graph_head_w: ParamId,
    pub graph_head_b: ParamId,
    pub conv: Option<ConvBranch>,
    pub lstm: Option<LstmBranch>,
}

impl HybridModel {
    /// Instantiate with seeded Glorot initialization. Parameter draw order is
    /// fixed (stack, graph head, conv, LSTM) so the graph branch of a hybrid
    /// and its graph-only ablation start identical under the same seed.
    pub fn build(config: &TrainConfig, n_features: usize, n_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_features < 2 {
            return Err(Error::Config(format!(
                "model needs at least 2 features, got {n_features}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let pattern = DimPattern::for_dataset(config.dataset_id);
        let dims = stack_dims(n_features, n_classes, config.n_layers, pattern)?;

        let stack = if config.variant.uses_attention() {
            let mut layers = Vec::with_capacity(dims.len());
            let mut in_dim = n_features;
            for (i, &out_dim) in dims.iter().enumerate() {
                let combine = if i + 1 == dims.len() {
                    HeadCombine::Average
                } else {
                    HeadCombine::Concat
                };
                let layer = GatLayer::new(
                    &format!("gat{i}"),
                    in_dim,
                    out_dim,
                    config.n_heads,
                    combine,
                    config.normalize,
                    config.bn_momentum,
                    &mut params,
                    &mut rng,
                );
                in_dim = layer.output_dim();
                layers.push(layer);
            }
            GraphStack::Gat(layers)
        } else {
            let mut layers = Vec::with_capacity(dims.len());
            let mut in_dim = n_features;
            for (i, &out_dim) in dims.iter().enumerate() {
                layers.push(SageLayer::new(
                    &format!("sage{i}"),
                    in_dim,
                    out_dim,
                    config.aggregator,
                    config.sage_variant,
                    config.normalize,
                    config.bn_momentum,
                    &mut params,
                    &mut rng,
                ));
                in_dim = out_dim;
            }
            GraphStack::Sage(layers)
        };
        let stack_out = match &stack {
            GraphStack::Sage(v) => v.last().unwrap().out_dim,
            GraphStack::Gat(v) => v.last().unwrap().output_dim(),
        };
        let graph_head_w = params.add_glorot("graph.head.w", stack_out, n_classes, ParamGroup::Graph, &mut rng);
        let graph_head_b = params.add_zeros("graph.head.b", 1, n_classes, ParamGroup::Graph);

        let (conv, lstm) = if config.variant.is_hybrid() {
            let conv = ConvBranch::new(n_features, n_classes, &mut params, &mut rng);
            let hidden = config.lstm_hidden.unwrap_or(n_features);
            let lstm = LstmBranch::new(n_features, hidden, n_classes, &mut params, &mut rng);
            (Some(conv), Some(lstm))
        } else {
            (None, None)
        };

        Ok(Self {
            variant: config.variant,
            n_features,
            n_classes,
            dims,
            params,
            stack,
            graph_head_w,
            graph_head_b,
            conv,
            lstm,
        })
    }

    /// Graph-stack node representations after each layer, in eval or
    /// training mode.
    pub fn stack_forward(
        &mut self,
        tape: &mut Tape,
        graph: &SampleGraph,
        bound: &[TensorId],
        training: bool,
        perm_seed: u64,
    ) -> Result<Vec<TensorId>> {
        let mut h = tape.constant(graph.node_features.clone(), graph.n_nodes, graph.n_features);
        let mut per_layer = Vec::with_capacity(self.stack.len());
        match &mut self.stack {
            GraphStack::Sage(layers) => {
                for (i, layer) in layers.iter_mut().enumerate() {
                    h = layer.forward(
                        tape,
                        graph,
                        h,
                        bound,
                        training,
                        perm_seed.wrapping_add(i as u64),
                    )?;
                    per_layer.push(h);
                }
            }
            GraphStack::Gat(layers) => {
                for layer in layers.iter_mut() {
                    h = layer.forward(tape, graph, h, bound, training)?;
                    per_layer.push(h);
                }
            }
        }
        Ok(per_layer)
    }

    /// Forward all branches; every head returns `[n × C]` log-probabilities.
    pub fn forward_heads(
        &mut self,
        tape: &mut Tape,
        graph: &SampleGraph,
        bound: &[TensorId],
        training: bool,
        perm_seed: u64,
    ) -> Result<HeadOutputs> {
        if graph.n_features != self.n_features {
            return Err(Error::Dimension(format!(
                "model built for {} features, graph has {}",
                self.n_features, graph.n_features
            )));
        }
        let stack_out = *self
            .stack_forward(tape, graph, bound, training, perm_seed)?
            .last()
            .expect("stack has layers");
        let logits = tape.matmul(stack_out, bound[self.graph_head_w.0])?;
        let logits = tape.add_row_bcast(logits, bound[self.graph_head_b.0])?;
        let graph_head = tape.log_softmax_rows(logits);

        let x = tape.constant(graph.node_features.clone(), graph.n_nodes, graph.n_features);
        let conv = match &self.conv {
            Some(branch) => Some(branch.forward(tape, bound, x)?),
            None => None,
        };
        let lstm = match &self.lstm {
            Some(branch) => Some(branch.forward(tape, bound, x)?),
            None => None,
        };
        Ok(HeadOutputs {
            graph: graph_head,
            conv,
            lstm,
        })
    }

    /// Names and running statistics of every batch-norm buffer, paired with
    /// mutable access for checkpoint restore.
    fn bn_buffers(&mut self) -> Vec<(String, &mut BatchNorm)> {
        let mut out = Vec::new();
        match &mut self.stack {
            GraphStack::Sage(layers) => {
                for (i, l) in layers.iter_mut().enumerate() {
                    if let NormLayer::Batch(bn) = &mut l.norm {
                        out.push((format!("sage{i}.bn"), bn));
                    }
                }
            }
            GraphStack::Gat(layers) => {
                for (i, l) in layers.iter_mut().enumerate() {
                    if let NormLayer::Batch(bn) = &mut l.norm {
                        out.push((format!("gat{i}.bn"), bn));
                    }
                }
            }
        }
        out
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }

    /// Write `<prefix>.bin` / `<prefix>.json` with parameters, batch-norm
    /// running statistics, and (optionally) optimizer moments.
    pub fn save_checkpoint(
        &mut self,
        prefix: &Path,
        adam: Option<&crate::tensor::adam::AdamState>,
        extra_meta: serde_json::Value,
    ) -> Result<()> {
        let mut blobs: Vec<(String, usize, usize, Vec<f64>)> = self
            .params
            .entries()
            .iter()
            .map(|e| (format!("param.{}", e.name), e.rows, e.cols, e.data.clone()))
            .collect();
        for (name, bn) in self.bn_buffers() {
            blobs.push((format!("buffer.{name}.running_mean"), 1, bn.channels, bn.running_mean.clone()));
            blobs.push((format!("buffer.{name}.running_var"), 1, bn.channels, bn.running_var.clone()));
        }
        let mut meta = serde_json::json!({
            "variant": self.variant.as_str(),
            "dims": self.dims,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "param_checksum": format!("{:016x}", self.checksum()),
        });
        if let Some(adam) = adam {
            let (m, v) = adam.moments();
            for (i, e) in self.params.entries().iter().enumerate() {
                blobs.push((format!("adam.m.{}", e.name), e.rows, e.cols, m[i].clone()));
                blobs.push((format!("adam.v.{}", e.name), e.rows, e.cols, v[i].clone()));
            }
            meta["adam"] = serde_json::json!({
                "t": adam.t,
                "lr_graph": adam.lr_graph,
                "lr_seq": adam.lr_seq,
                "weight_decay": adam.weight_decay,
            });
        }
        if let serde_json::Value::Object(extra) = extra_meta {
            for (k, v) in extra {
                meta[k] = v;
            }
        }
        let borrowed: Vec<(String, usize, usize, &[f64])> = blobs
            .iter()
            .map(|(n, r, c, d)| (n.clone(), *r, *c, d.as_slice()))
            .collect();
        checkpoint::save_blobs(prefix, &borrowed, meta)
    }

    /// Restore parameters and batch-norm statistics saved by
    /// [`HybridModel::save_checkpoint`] into a freshly built model.
    pub fn load_checkpoint(&mut self, prefix: &Path) -> Result<()> {
        let (blobs, _meta) = checkpoint::load_blobs(prefix)?;
        for e in self.params.entries_mut() {
            let key = format!("param.{}", e.name);
            let (rows, cols, data) = blobs
                .get(&key)
                .ok_or_else(|| Error::Report(format!("checkpoint missing '{key}'")))?;
            if (*rows, *cols) != (e.rows, e.cols) {
                return Err(Error::Report(format!(
                    "checkpoint shape mismatch for '{key}': {rows}×{cols} vs {}×{}",
                    e.rows, e.cols
                )));
            }
            e.data = data.clone();
        }
        for (name, bn) in self.bn_buffers() {
            let mean_key = format!("buffer.{name}.running_mean");
            let var_key = format!("buffer.{name}.running_var");
            if let Some((_, _, mean)) = blobs.get(&mean_key) {
                bn.running_mean = mean.clone();
            }
            if let Some((_, _, var)) = blobs.get(&var_key) {
                bn.running_var = var.clone();
            }
        }
        Ok(())
    }
}
