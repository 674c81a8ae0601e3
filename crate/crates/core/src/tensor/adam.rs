//! Adam optimizer with bias correction and two decoupled learning-rate groups.

use super::params::{ParamGroup, ParamSet};

/// Per-parameter Adam moments plus the shared hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub t: u64,
    pub lr_graph: f64,
    pub lr_seq: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Optional global-norm gradient clip, off by default.
    pub grad_clip: Option<f64>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr_graph: f64, lr_seq: f64, weight_decay: f64) -> Self {
        Self {
            m: params.entries().iter().map(|e| vec![0.0; e.data.len()]).collect(),
            v: params.entries().iter().map(|e| vec![0.0; e.data.len()]).collect(),
            t: 0,
            lr_graph,
            lr_seq,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            grad_clip: None,
        }
    }

    /// One update over all parameters. Weight decay enters as an L2 term
    /// added to the gradient before the moment updates.
    pub fn step(&mut self, params: &mut ParamSet, grads: &mut [Vec<f64>]) {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        if let Some(max_norm) = self.grad_clip {
            let norm: f64 = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm > max_norm && norm > 0.0 {
                let scale = max_norm / norm;
                for g in grads.iter_mut() {
                    for v in g.iter_mut() {
                        *v *= scale;
                    }
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, entry) in params.entries_mut().iter_mut().enumerate() {
            let lr = match entry.group {
                ParamGroup::Graph => self.lr_graph,
                ParamGroup::Sequence => self.lr_seq,
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (k, p) in entry.data.iter_mut().enumerate() {
                let g = grads[i][k] + self.weight_decay * *p;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub fn restore_moments(&mut self, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: u64) {
        self.m = m;
        self.v = v;
        self.t = t;
    }
}
