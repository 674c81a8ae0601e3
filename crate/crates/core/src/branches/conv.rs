//! 1-D convolutional branch: two valid width-5 convolutions over the window
//! axis with features as channels, LeakyReLU(0.1), and a per-node class head.
//!
//! Valid convolution shortens the sequence while targets exist per node, so
//! the branch aligns outputs back to the window by symmetric edge
//! replication: windows shorter than 9 rows are edge-padded before the
//! convolutions, and each node reads the output position nearest its center.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::params::{ParamGroup, ParamId, ParamSet};
use crate::tensor::tape::{Tape, TensorId};

pub const KERNEL_WIDTH: usize = 5;
pub const CONV_LEAK_ALPHA: f64 = 0.1;

/// One valid cross-correlation layer. The kernel matrix is laid out
/// `[(width·in_channels) × out_channels]` with rows ordered offset-major:
/// row `d·in_channels + c` holds tap `d` of input channel `c`.
#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv1dLayer {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let kernel = params.add_glorot(
            &format!("{name}.kernel"),
            KERNEL_WIDTH * in_channels,
            out_channels,
            ParamGroup::Sequence,
            rng,
        );
        let bias = params.add_zeros(&format!("{name}.bias"), 1, out_channels, ParamGroup::Sequence);
        Self {
            in_channels,
            out_channels,
            kernel,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        KERNEL_WIDTH * self.in_channels * self.out_channels + self.out_channels
    }

    /// Valid stride-1 convolution with LeakyReLU(0.1): `[L×in] -> [(L-4)×out]`.
    pub fn forward(&self, tape: &mut Tape, bound: &[TensorId], x: TensorId) -> Result<TensorId> {
        let (len, channels) = tape.shape(x);
        if channels != self.in_channels {
            return Err(Error::Dimension(format!(
                "conv1d: expected {} channels, got {channels}",
                self.in_channels
            )));
        }
        if len < KERNEL_WIDTH {
            return Err(Error::Dimension(format!(
                "conv1d: input length {len} is shorter than the kernel width {KERNEL_WIDTH}"
            )));
        }
        let out_len = len - KERNEL_WIDTH + 1;
        let mut taps = Vec::with_capacity(KERNEL_WIDTH);
        for d in 0..KERNEL_WIDTH {
            taps.push(tape.slice_rows(x, d, d + out_len)?);
        }
        let patches = tape.concat_cols(&taps)?; // [(L-4) × 5·in], offset-major
        let z = tape.matmul(patches, bound[self.kernel.0])?;
        let z = tape.add_row_bcast(z, bound[self.bias.0])?;
        Ok(tape.leaky_relu(z, CONV_LEAK_ALPHA))
    }
}

/// Two conv layers plus the per-node projection head.
#[derive(Debug, Clone)]
pub struct ConvBranch {
    pub layers: [Conv1dLayer; 2],
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub n_classes: usize,
}

/// Minimum padded length for two valid width-5 layers to emit one position.
const MIN_CONV_LEN: usize = 2 * (KERNEL_WIDTH - 1) + 1;

impl ConvBranch {
    /// Kernel counts follow the feature count for the first layer and the
    /// class count for the second.
    pub fn new(
        n_features: usize,
        n_classes: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = [
            Conv1dLayer::new("conv.layer0", n_features, n_features, params, rng),
            Conv1dLayer::new("conv.layer1", n_features, n_classes, params, rng),
        ];
        let head_w = params.add_glorot("conv.head.w", n_classes, n_classes, ParamGroup::Sequence, rng);
        let head_b = params.add_zeros("conv.head.b", 1, n_classes, ParamGroup::Sequence);
        Self {
            layers,
            head_w,
            head_b,
            n_classes,
        }
    }

    /// `[w×F]` window in, `[w×C]` log-probabilities out, one row per node.
    pub fn forward(&self, tape: &mut Tape, bound: &[TensorId], x: TensorId) -> Result<TensorId> {
        let (w, _) = tape.shape(x);
        // edge-replicate tiny windows so both valid layers fit
        let (x, left_pad, padded_len) = if w < MIN_CONV_LEN {
            let pad = MIN_CONV_LEN - w;
            let left = pad / 2;
            let right = pad - left;
            let mut idx = Vec::with_capacity(MIN_CONV_LEN);
            idx.extend(std::iter::repeat(0).take(left));
            idx.extend(0..w);
            idx.extend(std::iter::repeat(w - 1).take(right));
            (tape.gather_rows(x, std::rc::Rc::new(idx))?, left, MIN_CONV_LEN)
        } else {
            (x, 0, w)
        };
        let y1 = self.layers[0].forward(tape, bound, x)?;
        let y2 = self.layers[1].forward(tape, bound, y1)?;
        let out_len = padded_len - 2 * (KERNEL_WIDTH - 1);
        // node i reads the output whose receptive field centers on it,
        // clamped into range (symmetric edge replication)
        let idx: Vec<usize> = (0..w)
            .map(|i| {
                (i as isize + left_pad as isize - (KERNEL_WIDTH as isize - 1))
                    .clamp(0, out_len as isize - 1) as usize
            })
            .collect();
        let aligned = tape.gather_rows(y2, std::rc::Rc::new(idx))?;
        let logits = tape.matmul(aligned, bound[self.head_w.0])?;
        let logits = tape.add_row_bcast(logits, bound[self.head_b.0])?;
        Ok(tape.log_softmax_rows(logits))
    }
}
