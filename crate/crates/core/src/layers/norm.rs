//! Batch normalization with running statistics.

use crate::error::Result;
use crate::tensor::params::{ParamGroup, ParamId, ParamSet};
use crate::tensor::tape::{Tape, TensorId};

/// Learnable scale/shift plus the running statistics used at evaluation.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(
        name: &str,
        channels: usize,
        momentum: f64,
        group: ParamGroup,
        params: &mut ParamSet,
    ) -> Self {
        let gamma = params.add_const(&format!("{name}.gamma"), 1, channels, 1.0, group);
        let beta = params.add_zeros(&format!("{name}.beta"), 1, channels, group);
        Self {
            gamma,
            beta,
            channels,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps: 1e-5,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    /// Training mode normalizes by batch statistics and updates the running
    /// values; evaluation uses the running statistics. A training batch of
    /// one row cannot produce batch statistics and falls back to the running
    /// values with a warning.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: TensorId,
        bound: &[TensorId],
        training: bool,
    ) -> Result<TensorId> {
        let (n, _) = tape.shape(x);
        let use_batch = training && n > 1;
        if training && n == 1 {
            log::warn!("batch norm got a single-row batch; using running statistics");
        }
        let (y, mean, var) = tape.batch_norm(
            x,
            bound[self.gamma.0],
            bound[self.beta.0],
            &self.running_mean,
            &self.running_var,
            self.eps,
            use_batch,
        )?;
        if use_batch {
            for j in 0..self.channels {
                self.running_mean[j] =
                    (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
                self.running_var[j] =
                    (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j];
            }
        }
        Ok(y)
    }
}
