//! Neighborhood-aggregating graph layer with mean, pool, and LSTM
//! aggregators.
//!
//! The default path transforms `concat(h_v, h_N(v))`; the `Convolutional`
//! variant transforms the self-inclusive neighborhood mean alone, which is
//! the shape the published per-layer parameter counts follow.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::branches::lstm::LstmCellParams;
use crate::error::{Error, Result};
use crate::graph::SampleGraph;
use crate::layers::norm::BatchNorm;
use crate::tensor::params::{ParamGroup, ParamId, ParamSet};
use crate::tensor::tape::{Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Mean,
    Pool,
    Lstm,
}

impl AggregatorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "mean" => Ok(AggregatorKind::Mean),
            "pool" => Ok(AggregatorKind::Pool),
            "lstm" => Ok(AggregatorKind::Lstm),
            other => Err(Error::Config(format!("unknown aggregator '{other}'"))),
        }
    }
}

/// Which transform the layer applies after aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SageVariant {
    /// Transform `concat(h_v, h_N)`; weight is `[2·in × out]`.
    Concat,
    /// Transform the self-inclusive aggregate alone; weight is `[in × out]`.
    Convolutional,
}

impl SageVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "concat" => Ok(SageVariant::Concat),
            "convolutional" => Ok(SageVariant::Convolutional),
            other => Err(Error::Config(format!("unknown layer variant '{other}'"))),
        }
    }
}

/// Post-activation normalization choice.
#[derive(Debug, Clone)]
pub enum NormLayer {
    Batch(BatchNorm),
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    BatchNorm,
    L2,
}

impl NormalizeMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "batchnorm" | "batch-norm" | "batch_norm" => Ok(NormalizeMode::BatchNorm),
            "l2" => Ok(NormalizeMode::L2),
            other => Err(Error::Config(format!("unknown normalize mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SageLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
    pub aggregator: AggregatorKind,
    pub variant: SageVariant,
    /// Pool aggregator transform (`[in × in]` weight plus bias).
    pub pool: Option<(ParamId, ParamId)>,
    /// LSTM aggregator cell with hidden size `in_dim`.
    pub lstm: Option<LstmCellParams>,
    pub norm: NormLayer,
}

impl SageLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        aggregator: AggregatorKind,
        variant: SageVariant,
        normalize: NormalizeMode,
        bn_momentum: f64,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight_rows = match variant {
            SageVariant::Concat => 2 * in_dim,
            SageVariant::Convolutional => in_dim,
        };
        let weight = params.add_glorot(&format!("{name}.weight"), weight_rows, out_dim, ParamGroup::Graph, rng);
        let bias = params.add_zeros(&format!("{name}.bias"), 1, out_dim, ParamGroup::Graph);
        let pool = matches!(aggregator, AggregatorKind::Pool).then(|| {
            (
                params.add_glorot(&format!("{name}.pool.weight"), in_dim, in_dim, ParamGroup::Graph, rng),
                params.add_zeros(&format!("{name}.pool.bias"), 1, in_dim, ParamGroup::Graph),
            )
        });
        let lstm = matches!(aggregator, AggregatorKind::Lstm).then(|| {
            LstmCellParams::new(&format!("{name}.lstm"), in_dim, in_dim, ParamGroup::Graph, params, rng)
        });
        let norm = match normalize {
            NormalizeMode::BatchNorm => NormLayer::Batch(BatchNorm::new(
                &format!("{name}.bn"),
                out_dim,
                bn_momentum,
                ParamGroup::Graph,
                params,
            )),
            NormalizeMode::L2 => NormLayer::L2,
        };
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
            aggregator,
            variant,
            pool,
            lstm,
            norm,
        }
    }

    /// Trainable scalars in this layer (weight, bias, norm, aggregator).
    pub fn param_count(&self) -> usize {
        let weight_rows = match self.variant {
            SageVariant::Concat => 2 * self.in_dim,
            SageVariant::Convolutional => self.in_dim,
        };
        let mut count = weight_rows * self.out_dim + self.out_dim;
        if self.pool.is_some() {
            count += self.in_dim * self.in_dim + self.in_dim;
        }
        if let Some(lstm) = &self.lstm {
            count += lstm.param_count();
        }
        count
    }

    pub fn norm_param_count(&self) -> usize {
        match &self.norm {
            NormLayer::Batch(bn) => bn.param_count(),
            NormLayer::L2 => 0,
        }
    }

    /// Aggregated neighborhood representation, one row per node.
    fn aggregate(
        &self,
        tape: &mut Tape,
        graph: &SampleGraph,
        h: TensorId,
        bound: &[TensorId],
        perm_seed: u64,
    ) -> Result<TensorId> {
        let n = graph.n_nodes;
        match self.aggregator {
            AggregatorKind::Mean => {
                // element-wise mean of {h_v} ∪ neighbors
                let lists: Vec<Vec<usize>> = (0..n)
                    .map(|v| {
                        let mut l = Vec::with_capacity(graph.neighbor_lists[v].len() + 1);
                        l.push(v);
                        l.extend_from_slice(&graph.neighbor_lists[v]);
                        l
                    })
                    .collect();
                tape.neighbor_mean(h, Rc::new(lists))
            }
            AggregatorKind::Pool => {
                let (w_pool, b_pool) = self.pool.expect("pool aggregator without parameters");
                let t = tape.matmul(h, bound[w_pool.0])?;
                let t = tape.add_row_bcast(t, bound[b_pool.0])?;
                let t = tape.relu(t);
                // max over transformed neighbors; an isolated node pools itself
                let lists: Vec<Vec<usize>> = (0..n)
                    .map(|v| {
                        if graph.neighbor_lists[v].is_empty() {
                            vec![v]
                        } else {
                            graph.neighbor_lists[v].clone()
                        }
                    })
                    .collect();
                tape.neighbor_max(t, Rc::new(lists))
            }
            AggregatorKind::Lstm => {
                let lstm = self.lstm.as_ref().expect("lstm aggregator without parameters");
                let mut rows = Vec::with_capacity(n);
                for v in 0..n {
                    let mut order = if graph.neighbor_lists[v].is_empty() {
                        vec![v]
                    } else {
                        graph.neighbor_lists[v].clone()
                    };
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(perm_seed ^ (v as u64).wrapping_mul(0x9e3779b97f4a7c15));
                    order.shuffle(&mut rng);
                    let seq = tape.gather_rows(h, Rc::new(order))?;
                    let states = lstm.run_sequence(tape, bound, seq)?;
                    rows.push(*states.last().expect("non-empty sequence"));
                }
                tape.stack_rows(&rows)
            }
        }
    }

    /// `h' = Δ(W·[concat(h, h_N) | h_N] + b)` followed by batch-norm or L2
    /// row normalization.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        graph: &SampleGraph,
        h: TensorId,
        bound: &[TensorId],
        training: bool,
        perm_seed: u64,
    ) -> Result<TensorId> {
        let (rows, cols) = tape.shape(h);
        if rows != graph.n_nodes || cols != self.in_dim {
            return Err(Error::Dimension(format!(
                "sage layer expected {}×{}, got {rows}×{cols}",
                graph.n_nodes, self.in_dim
            )));
        }
        let h_n = self.aggregate(tape, graph, h, bound, perm_seed)?;
        let z_in = match self.variant {
            SageVariant::Concat => tape.concat_cols(&[h, h_n])?,
            SageVariant::Convolutional => h_n,
        };
        let z = tape.matmul(z_in, bound[self.weight.0])?;
        let z = tape.add_row_bcast(z, bound[self.bias.0])?;
        let act = tape.relu(z);
        match &mut self.norm {
            NormLayer::Batch(bn) => bn.forward(tape, act, bound, training),
            NormLayer::L2 => Ok(tape.l2_normalize_rows(act)),
        }
    }
}

// Plain-slice aggregator reference functions. These are the spec-level
// operations; the tape path above must agree with them (see tests).

/// Element-wise mean of `{h_self} ∪ neighbors`. Summation runs in a
/// canonical (sorted) order so any permutation of the neighbor set produces
/// bit-identical output.
pub fn aggregate_mean(h_self: &[f64], neighbors: &[&[f64]]) -> Vec<f64> {
    let d = h_self.len();
    let mut ordered: Vec<&[f64]> = neighbors.to_vec();
    ordered.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
    let mut out = h_self.to_vec();
    for n in ordered {
        assert_eq!(n.len(), d, "aggregate_mean: dimension mismatch");
        for k in 0..d {
            out[k] += n[k];
        }
    }
    let inv = 1.0 / (neighbors.len() + 1) as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Element-wise max of `relu(W_pool·h + b)` over the neighbor set; the
/// caller passes `[h_self]` for an empty neighborhood.
pub fn aggregate_pool(neighbors: &[&[f64]], w_pool: &[f64], b_pool: &[f64]) -> Vec<f64> {
    assert!(!neighbors.is_empty(), "aggregate_pool: empty neighbor set");
    let d = neighbors[0].len();
    assert_eq!(w_pool.len(), d * d);
    let mut out = vec![f64::NEG_INFINITY; d];
    for h in neighbors {
        for k in 0..d {
            let mut s = b_pool[k];
            for j in 0..d {
                s += h[j] * w_pool[j * d + k];
            }
            let s = s.max(0.0);
            if s > out[k] {
                out[k] = s;
            }
        }
    }
    out
}

#[cfg(test)]
mod plain_tests {
    use super::*;

    #[test]
    fn mean_with_no_neighbors_is_identity() {
        let h = [1.0, -2.0, 3.0];
        assert_eq!(aggregate_mean(&h, &[]), h.to_vec());
    }

    #[test]
    fn mean_two_point_example() {
        let h = [0.0, 0.0];
        let n = [2.0, 4.0];
        assert_eq!(aggregate_mean(&h, &[&n]), vec![1.0, 2.0]);
    }

    #[test]
    fn mean_is_permutation_invariant_bit_exact() {
        let h = [0.5, -1.0];
        let a = [1.0 / 3.0, 2.0 / 7.0];
        let b = [3.0983, -4.017];
        let c = [0.2577, 0.1251];
        let reference = aggregate_mean(&h, &[&a, &b, &c]);
        let perms: [[&[f64]; 3]; 5] = [
            [&a, &c, &b],
            [&b, &a, &c],
            [&b, &c, &a],
            [&c, &a, &b],
            [&c, &b, &a],
        ];
        for p in perms {
            assert_eq!(aggregate_mean(&h, &p), reference, "bit-identical under reordering");
        }
    }

    #[test]
    fn pool_singleton_is_the_transform() {
        // W = I, b = 0: pooling one neighbor returns relu(h)
        let w = [1.0, 0.0, 0.0, 1.0];
        let b = [0.0, 0.0];
        let h = [0.7, -0.3];
        assert_eq!(aggregate_pool(&[&h], &w, &b), vec![0.7, 0.0]);
    }

    #[test]
    fn pool_identity_transform_takes_elementwise_max() {
        let w = [1.0, 0.0, 0.0, 1.0];
        let b = [0.0, 0.0];
        let a = [1.0, 5.0];
        let c = [4.0, 2.0];
        assert_eq!(aggregate_pool(&[&a, &c], &w, &b), vec![4.0, 5.0]);
    }

    #[test]
    fn pool_is_permutation_invariant() {
        use rand::{Rng, SeedableRng};
        use rand::seq::SliceRandom;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let d = 4;
        let w: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let neighbors: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let base: Vec<&[f64]> = neighbors.iter().map(|v| v.as_slice()).collect();
        let reference = aggregate_pool(&base, &w, &b);
        for _ in 0..10 {
            let mut shuffled = base.clone();
            shuffled.shuffle(&mut rng);
            assert_eq!(aggregate_pool(&shuffled, &w, &b), reference);
        }
    }
}
