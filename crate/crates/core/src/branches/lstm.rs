//! Stacked LSTM branch: five recurrent layers over the window sequence and a
//! shared linear head producing per-timestep class log-probabilities.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::params::{ParamGroup, ParamId, ParamSet};
use crate::tensor::tape::{Tape, TensorId};

/// Parameters of one LSTM cell. Gate order in every `[.. × 4H]` matrix is
/// `i, f, g, o`.
#[derive(Debug, Clone)]
pub struct LstmCellParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmCellParams {
    pub fn new(
        name: &str,
        input_dim: usize,
        hidden: usize,
        group: ParamGroup,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w_ih = params.add_glorot(&format!("{name}.w_ih"), input_dim, 4 * hidden, group, rng);
        let w_hh = params.add_glorot(&format!("{name}.w_hh"), hidden, 4 * hidden, group, rng);
        let bias = params.add_zeros(&format!("{name}.bias"), 1, 4 * hidden, group);
        Self {
            input_dim,
            hidden,
            w_ih,
            w_hh,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.input_dim + self.hidden + 1)
    }

    /// One step: standard gates (`i,f,o` sigmoid, `g` tanh),
    /// `c_t = f⊙c + i⊙g`, `h_t = o⊙tanh(c_t)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &[TensorId],
        x: TensorId,
        h: TensorId,
        c: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let xp = tape.matmul(x, bound[self.w_ih.0])?;
        let xp = tape.add_row_bcast(xp, bound[self.bias.0])?;
        let hc = tape.lstm_cell(xp, h, c, bound[self.w_hh.0])?;
        let h = tape.slice_cols(hc, 0, self.hidden)?;
        let c = tape.slice_cols(hc, self.hidden, 2 * self.hidden)?;
        Ok((h, c))
    }

    /// Run over a `[T×input]` sequence from zero state, returning each step's
    /// hidden state. The input projection for all timesteps is batched into
    /// one matmul.
    pub fn run_sequence(
        &self,
        tape: &mut Tape,
        bound: &[TensorId],
        xs: TensorId,
    ) -> Result<Vec<TensorId>> {
        let (steps, _) = tape.shape(xs);
        let xp_all = tape.matmul(xs, bound[self.w_ih.0])?;
        let xp_all = tape.add_row_bcast(xp_all, bound[self.bias.0])?;
        let mut h = tape.constant(vec![0.0; self.hidden], 1, self.hidden);
        let mut c = tape.constant(vec![0.0; self.hidden], 1, self.hidden);
        let mut hidden_states = Vec::with_capacity(steps);
        for t in 0..steps {
            let xp = tape.slice_rows(xp_all, t, t + 1)?;
            let hc = tape.lstm_cell(xp, h, c, bound[self.w_hh.0])?;
            h = tape.slice_cols(hc, 0, self.hidden)?;
            c = tape.slice_cols(hc, self.hidden, 2 * self.hidden)?;
            hidden_states.push(h);
        }
        Ok(hidden_states)
    }
}

/// Five stacked LSTM layers plus a shared linear head.
#[derive(Debug, Clone)]
pub struct LstmBranch {
    pub layers: Vec<LstmCellParams>,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub hidden: usize,
    pub n_classes: usize,
}

pub const LSTM_BRANCH_LAYERS: usize = 5;

impl LstmBranch {
    pub fn new(
        input_dim: usize,
        hidden: usize,
        n_classes: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = (0..LSTM_BRANCH_LAYERS)
            .map(|i| {
                let in_dim = if i == 0 { input_dim } else { hidden };
                LstmCellParams::new(
                    &format!("lstm.layer{i}"),
                    in_dim,
                    hidden,
                    ParamGroup::Sequence,
                    params,
                    rng,
                )
            })
            .collect();
        let head_w = params.add_glorot("lstm.head.w", hidden, n_classes, ParamGroup::Sequence, rng);
        let head_b = params.add_zeros("lstm.head.b", 1, n_classes, ParamGroup::Sequence);
        Self {
            layers,
            head_w,
            head_b,
            hidden,
            n_classes,
        }
    }

    /// `[w×F]` window in, `[w×C]` log-probabilities out (one row per node).
    pub fn forward(&self, tape: &mut Tape, bound: &[TensorId], x: TensorId) -> Result<TensorId> {
        let mut seq = x;
        for layer in &self.layers {
            let hs = layer.run_sequence(tape, bound, seq)?;
            seq = tape.stack_rows(&hs)?;
        }
        let logits = tape.matmul(seq, bound[self.head_w.0])?;
        let logits = tape.add_row_bcast(logits, bound[self.head_b.0])?;
        Ok(tape.log_softmax_rows(logits))
    }
}
