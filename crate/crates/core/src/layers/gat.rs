//! Graph attention layer: learned softmax-normalized neighbor weighting,
//! optionally multi-head with concatenated or averaged heads.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::SampleGraph;
use crate::layers::norm::BatchNorm;
use crate::layers::sage::{NormLayer, NormalizeMode};
use crate::tensor::params::{ParamGroup, ParamId, ParamSet};
use crate::tensor::tape::{Tape, TensorId};

pub const GAT_LEAKY_SLOPE: f64 = 0.2;

/// How multi-head outputs combine: concatenation for hidden layers,
/// averaging for the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadCombine {
    Concat,
    Average,
}

#[derive(Debug, Clone)]
pub struct GatHead {
    pub weight: ParamId,
    /// Attention vector split into the self and neighbor halves, each
    /// `[out × 1]`, so scores come from two matrix products.
    pub attn_self: ParamId,
    pub attn_neigh: ParamId,
}

#[derive(Debug, Clone)]
pub struct GatLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub heads: Vec<GatHead>,
    pub combine: HeadCombine,
    pub leaky_slope: f64,
    pub norm: NormLayer,
}

impl GatLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        n_heads: usize,
        combine: HeadCombine,
        normalize: NormalizeMode,
        bn_momentum: f64,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(n_heads >= 1);
        let heads = (0..n_heads)
            .map(|k| GatHead {
                weight: params.add_glorot(&format!("{name}.h{k}.weight"), in_dim, out_dim, ParamGroup::Graph, rng),
                attn_self: params.add_glorot(&format!("{name}.h{k}.attn_self"), out_dim, 1, ParamGroup::Graph, rng),
                attn_neigh: params.add_glorot(&format!("{name}.h{k}.attn_neigh"), out_dim, 1, ParamGroup::Graph, rng),
            })
            .collect();
        let norm_channels = match combine {
            HeadCombine::Concat => out_dim * n_heads,
            HeadCombine::Average => out_dim,
        };
        let norm = match normalize {
            NormalizeMode::BatchNorm => NormLayer::Batch(BatchNorm::new(
                &format!("{name}.bn"),
                norm_channels,
                bn_momentum,
                ParamGroup::Graph,
                params,
            )),
            NormalizeMode::L2 => NormLayer::L2,
        };
        Self {
            in_dim,
            out_dim,
            heads,
            combine,
            leaky_slope: GAT_LEAKY_SLOPE,
            norm,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.combine {
            HeadCombine::Concat => self.out_dim * self.heads.len(),
            HeadCombine::Average => self.out_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.heads.len() * (self.in_dim * self.out_dim + 2 * self.out_dim)
    }

    /// Attention neighborhood of a node: itself plus its neighbors.
    fn attention_set(graph: &SampleGraph, m: usize) -> Vec<usize> {
        let mut list = Vec::with_capacity(graph.neighbor_lists[m].len() + 1);
        list.push(m);
        list.extend_from_slice(&graph.neighbor_lists[m]);
        list
    }

    /// One head's pre-activation output rows `Σ_n sa_mn·(W f_n)`.
    fn head_forward(
        &self,
        tape: &mut Tape,
        graph: &SampleGraph,
        h: TensorId,
        head: &GatHead,
        bound: &[TensorId],
    ) -> Result<TensorId> {
        let hw = tape.matmul(h, bound[head.weight.0])?;
        let s_self = tape.matmul(hw, bound[head.attn_self.0])?;
        let s_neigh = tape.matmul(hw, bound[head.attn_neigh.0])?;
        let mut rows = Vec::with_capacity(graph.n_nodes);
        for m in 0..graph.n_nodes {
            let list = Rc::new(Self::attention_set(graph, m));
            let k = list.len();
            let sn = tape.gather_rows(s_neigh, list.clone())?;
            let sm = tape.slice_rows(s_self, m, m + 1)?;
            let scores = tape.add_scalar_bcast(sn, sm)?;
            let scores = tape.leaky_relu(scores, self.leaky_slope);
            let scores_row = tape.reshape(scores, 1, k)?;
            let log_sa = tape.log_softmax_rows(scores_row);
            let sa = tape.exp(log_sa);
            let neigh_feats = tape.gather_rows(hw, list)?;
            rows.push(tape.matmul(sa, neigh_feats)?);
        }
        tape.stack_rows(&rows)
    }

    /// Multi-head forward with ReLU activation and the configured
    /// normalization.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        graph: &SampleGraph,
        h: TensorId,
        bound: &[TensorId],
        training: bool,
    ) -> Result<TensorId> {
        let (rows, cols) = tape.shape(h);
        if rows != graph.n_nodes || cols != self.in_dim {
            return Err(Error::Dimension(format!(
                "gat layer expected {}×{}, got {rows}×{cols}",
                graph.n_nodes, self.in_dim
            )));
        }
        let mut outputs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            outputs.push(self.head_forward(tape, graph, h, head, bound)?);
        }
        let act = match self.combine {
            HeadCombine::Concat => {
                let activated: Vec<TensorId> = outputs.iter().map(|o| tape.relu(*o)).collect();
                tape.concat_cols(&activated)?
            }
            HeadCombine::Average => {
                let mut sum = outputs[0];
                for o in &outputs[1..] {
                    sum = tape.add(sum, *o)?;
                }
                let avg = tape.scale(sum, 1.0 / self.heads.len() as f64);
                tape.relu(avg)
            }
        };
        match &mut self.norm {
            NormLayer::Batch(bn) => bn.forward(tape, act, bound, training),
            NormLayer::L2 => Ok(tape.l2_normalize_rows(act)),
        }
    }
}

/// Dense attention-coefficient matrix for one head over plain slices:
/// `sa[m][n]` is nonzero only for `n` in `{m} ∪ NF(m)` and each row of
/// coefficients sums to one over that set.
pub fn gat_attention_coefficients(
    features: &[f64],
    n_nodes: usize,
    in_dim: usize,
    neighbor_lists: &[Vec<usize>],
    weight: &[f64],   // [in × out]
    attn_self: &[f64], // [out]
    attn_neigh: &[f64],
    out_dim: usize,
    leaky_slope: f64,
) -> Vec<f64> {
    let mut hw = vec![0.0; n_nodes * out_dim];
    for i in 0..n_nodes {
        for j in 0..in_dim {
            let v = features[i * in_dim + j];
            if v != 0.0 {
                for k in 0..out_dim {
                    hw[i * out_dim + k] += v * weight[j * out_dim + k];
                }
            }
        }
    }
    let score = |i: usize, vec: &[f64]| -> f64 {
        hw[i * out_dim..(i + 1) * out_dim]
            .iter()
            .zip(vec)
            .map(|(a, b)| a * b)
            .sum()
    };
    let mut sa = vec![0.0; n_nodes * n_nodes];
    for m in 0..n_nodes {
        let mut set = vec![m];
        set.extend_from_slice(&neighbor_lists[m]);
        let logits: Vec<f64> = set
            .iter()
            .map(|&n| {
                let e = score(m, attn_self) + score(n, attn_neigh);
                if e >= 0.0 {
                    e
                } else {
                    leaky_slope * e
                }
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for (&n, l) in set.iter().zip(&logits) {
            sa[m * n_nodes + n] = (l - max).exp() / z;
        }
    }
    sa
}
