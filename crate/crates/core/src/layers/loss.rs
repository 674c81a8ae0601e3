//! Unsupervised graph embedding loss: pull a co-occurring pair together,
//! push sampled negatives apart through a sigmoid log-likelihood.

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, TensorId};

/// One negative-sampling batch: an anchor embedding, a positive
/// (co-occurring) node, and `q` sampled negatives.
#[derive(Debug, Clone)]
pub struct NegSampleBatch {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

impl NegSampleBatch {
    pub fn new(anchor: usize, positive: usize, negatives: Vec<usize>) -> Result<Self> {
        if negatives.is_empty() {
            return Err(Error::Config("negative sample count must be at least 1".into()));
        }
        if negatives.contains(&positive) {
            return Err(Error::Config(
                "negative samples must not contain the positive node".into(),
            ));
        }
        Ok(Self {
            anchor,
            positive,
            negatives,
        })
    }

    pub fn q(&self) -> usize {
        self.negatives.len()
    }
}

/// `J = −log σ(z_uᵀz_v) − Q · mean_n log σ(−z_uᵀz_n)` over `[1×d]` embedding
/// rows on the tape.
pub fn unsupervised_graph_loss(
    tape: &mut Tape,
    z_u: TensorId,
    z_v: TensorId,
    negatives: &[TensorId],
    q: usize,
) -> Result<TensorId> {
    if negatives.is_empty() || q == 0 {
        return Err(Error::Config("negative sample count must be at least 1".into()));
    }
    let dot = |tape: &mut Tape, a: TensorId, b: TensorId| -> Result<TensorId> {
        let prod = tape.mul(a, b)?;
        Ok(tape.sum_all(prod))
    };
    let pos = dot(tape, z_u, z_v)?;
    let pos_sig = tape.sigmoid(pos);
    let pos_log = tape.log(pos_sig);
    let pos_term = tape.neg(pos_log);

    let mut neg_logs = Vec::with_capacity(negatives.len());
    for &z_n in negatives {
        let d = dot(tape, z_u, z_n)?;
        let nd = tape.neg(d);
        let s = tape.sigmoid(nd);
        neg_logs.push(tape.log(s));
    }
    let stacked = tape.stack_rows(&neg_logs)?;
    let mean = tape.mean_all(stacked);
    let neg_term = tape.scale(mean, -(q as f64));
    tape.add(pos_term, neg_term)
}
