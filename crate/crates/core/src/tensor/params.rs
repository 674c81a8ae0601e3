//! Persistent parameter storage shared across tapes.
//!
//! Parameters live outside any tape; each forward pass binds them as leaves
//! and reads gradients back after `backward`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, TensorId};

/// Optimizer group a parameter belongs to. The graph stack and its head use
/// one learning rate, the convolutional and LSTM branches another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParamGroup {
    Graph,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub group: ParamGroup,
}

/// Ordered collection of trainable parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Glorot-uniform initialized matrix.
    pub fn add_glorot(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        group: ParamGroup,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add_raw(name, rows, cols, data, group)
    }

    /// Zero-initialized entry (biases, batch-norm beta).
    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize, group: ParamGroup) -> ParamId {
        self.add_raw(name, rows, cols, vec![0.0; rows * cols], group)
    }

    /// Constant-initialized entry (batch-norm gamma starts at one).
    pub fn add_const(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        value: f64,
        group: ParamGroup,
    ) -> ParamId {
        self.add_raw(name, rows, cols, vec![value; rows * cols], group)
    }

    pub fn add_raw(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        group: ParamGroup,
    ) -> ParamId {
        assert_eq!(data.len(), rows * cols);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            rows,
            cols,
            data,
            group,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Register every parameter on a tape, in declaration order. With
    /// `requires_grad = false` the bound leaves are plain constants
    /// (evaluation passes).
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<TensorId> {
        self.entries
            .iter()
            .map(|e| tape.leaf(e.data.clone(), e.rows, e.cols, requires_grad))
            .collect()
    }

    /// Collect gradients for every entry after a backward pass. Entries the
    /// loss never reached report zeros.
    pub fn collect_grads(&self, tape: &Tape, bound: &[TensorId]) -> Vec<Vec<f64>> {
        self.entries
            .iter()
            .zip(bound)
            .map(|(e, id)| {
                tape.grad(*id)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; e.data.len()])
            })
            .collect()
    }

    /// FNV-1a checksum over the exact parameter bytes, for determinism tests
    /// and manifest stamping.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        for e in &self.entries {
            for b in e.name.as_bytes() {
                hash = (hash ^ *b as u64).wrapping_mul(0x100000001b3);
            }
            for v in &e.data {
                for b in v.to_le_bytes() {
                    hash = (hash ^ b as u64).wrapping_mul(0x100000001b3);
                }
            }
        }
        hash
    }
}
