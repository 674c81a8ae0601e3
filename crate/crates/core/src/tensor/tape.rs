//! Tape-based reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A `Tape` records every primitive application in creation order. Tensors are
//! plain indices into the tape; `backward` walks the record in reverse and
//! accumulates gradients additively, so fan-out is handled without any extra
//! bookkeeping. All storage is row-major, 64-bit, and two-dimensional (a
//! scalar is `[1, 1]`, a vector `[1, n]`).

use std::rc::Rc;

use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub usize);

/// Cached activations for the fused LSTM cell rule.
#[derive(Debug)]
pub struct LstmCache {
    gates: Vec<f64>,  // i, f, g, o — each hidden wide
    tanh_c: Vec<f64>, // tanh of the new cell state
}

/// Cached statistics for the fused batch-norm rule.
#[derive(Debug)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool, // true when normalized by batch statistics (training path)
}

#[derive(Debug)]
enum Rule {
    Leaf,
    Matmul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    AddRowBcast(TensorId, TensorId),
    AddScalarBcast(TensorId, TensorId),
    Scale(TensorId, f64),
    ConcatCols(Vec<TensorId>),
    StackRows(Vec<TensorId>),
    SliceRows(TensorId, usize),
    SliceCols(TensorId, usize),
    GatherRows(TensorId, Rc<Vec<usize>>),
    Reshape(TensorId),
    Relu(TensorId),
    LeakyRelu(TensorId, f64),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Exp(TensorId),
    Log(TensorId),
    SumAll(TensorId),
    MeanAll(TensorId),
    MeanRows(TensorId),
    MaxRows(TensorId, Vec<usize>),
    L2NormalizeRows(TensorId, Vec<f64>),
    LogSoftmaxRows(TensorId),
    CrossEntropy(TensorId, Rc<Vec<usize>>),
    NeighborMean(TensorId, Rc<Vec<Vec<usize>>>),
    NeighborMax(TensorId, Rc<Vec<Vec<usize>>>, Vec<usize>),
    LstmCell {
        xp: TensorId,
        h_prev: TensorId,
        c_prev: TensorId,
        w_hh: TensorId,
        cache: Box<LstmCache>,
    },
    BatchNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        cache: Box<BnCache>,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    rule: Rule,
}

/// Recording of one forward computation, consumed by one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Gradient of `id`, populated after [`Tape::backward`]. `None` when the
    /// tensor does not require gradients.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].grad.is_some()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, grad: bool, rule: Rule) -> TensorId {
        debug_assert_eq!(data.len(), rows * cols);
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {:?}",
            rule
        );
        let grad = if grad { Some(vec![0.0; rows * cols]) } else { None };
        self.nodes.push(Node { rows, cols, data, grad, rule });
        TensorId(self.nodes.len() - 1)
    }

    /// Record an input tensor.
    pub fn leaf(&mut self, data: Vec<f64>, rows: usize, cols: usize, requires_grad: bool) -> TensorId {
        assert_eq!(data.len(), rows * cols, "leaf data length must match shape");
        self.push(rows, cols, data, requires_grad, Rule::Leaf)
    }

    /// Record a constant (no gradient).
    pub fn constant(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> TensorId {
        self.leaf(data, rows, cols, false)
    }

    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.constant(vec![value], 1, 1)
    }

    fn dim_error(&self, op: &str, a: TensorId, b: TensorId) -> Error {
        Error::Dimension(format!(
            "{op}: incompatible shapes {:?} and {:?}",
            self.shape(a),
            self.shape(b)
        ))
    }

    // ---- binary ops ----

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(self.dim_error("matmul", a, b));
        }
        let mut out = vec![0.0; n * m];
        {
            let ad = self.data(a);
            let bd = self.data(b);
            for i in 0..n {
                for kk in 0..k {
                    let av = ad[i * k + kk];
                    if av != 0.0 {
                        let brow = &bd[kk * m..kk * m + m];
                        let orow = &mut out[i * m..i * m + m];
                        for j in 0..m {
                            orow[j] += av * brow[j];
                        }
                    }
                }
            }
        }
        let g = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(n, m, out, g, Rule::Matmul(a, b)))
    }

    fn zip_op(
        &mut self,
        a: TensorId,
        b: TensorId,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        rule: impl Fn(TensorId, TensorId) -> Rule,
    ) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_error(name, a, b));
        }
        let (r, c) = self.shape(a);
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let g = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(r, c, data, g, rule(a, b)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_op(a, b, "add", |x, y| x + y, Rule::Add)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_op(a, b, "sub", |x, y| x - y, Rule::Sub)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_op(a, b, "mul", |x, y| x * y, Rule::Mul)
    }

    /// `a[n×d] + b[1×d]`, broadcasting `b` over the rows of `a`.
    pub fn add_row_bcast(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (n, d) = self.shape(a);
        let (br, bd) = self.shape(b);
        if br != 1 || bd != d {
            return Err(self.dim_error("add_row_bcast", a, b));
        }
        let mut data = self.data(a).to_vec();
        let bv = self.data(b).to_vec();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += bv[j];
            }
        }
        let g = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(n, d, data, g, Rule::AddRowBcast(a, b)))
    }

    /// `a + s` where `s` is a `[1×1]` scalar tensor.
    pub fn add_scalar_bcast(&mut self, a: TensorId, s: TensorId) -> Result<TensorId> {
        if self.shape(s) != (1, 1) {
            return Err(self.dim_error("add_scalar_bcast", a, s));
        }
        let sv = self.data(s)[0];
        let (r, c) = self.shape(a);
        let data: Vec<f64> = self.data(a).iter().map(|x| x + sv).collect();
        let g = self.requires_grad(a) || self.requires_grad(s);
        Ok(self.push(r, c, data, g, Rule::AddScalarBcast(a, s)))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let (r, c) = self.shape(a);
        let data: Vec<f64> = self.data(a).iter().map(|x| x * factor).collect();
        let g = self.requires_grad(a);
        self.push(r, c, data, g, Rule::Scale(a, factor))
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        self.scale(a, -1.0)
    }

    // ---- structural ops ----

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        assert!(!parts.is_empty());
        let (n, _) = self.shape(parts[0]);
        let mut total = 0;
        for p in parts {
            let (r, c) = self.shape(*p);
            if r != n {
                return Err(self.dim_error("concat_cols", parts[0], *p));
            }
            total += c;
        }
        let mut data = vec![0.0; n * total];
        let mut offset = 0;
        for p in parts {
            let (_, c) = self.shape(*p);
            let pd = self.data(*p);
            for i in 0..n {
                data[i * total + offset..i * total + offset + c]
                    .copy_from_slice(&pd[i * c..i * c + c]);
            }
            offset += c;
        }
        let g = parts.iter().any(|p| self.requires_grad(*p));
        Ok(self.push(n, total, data, g, Rule::ConcatCols(parts.to_vec())))
    }

    /// Vertically stack blocks that all share the same column count.
    pub fn stack_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        assert!(!parts.is_empty());
        let (_, d) = self.shape(parts[0]);
        let mut rows = 0;
        for p in parts {
            let (r, c) = self.shape(*p);
            if c != d {
                return Err(self.dim_error("stack_rows", parts[0], *p));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * d);
        for p in parts {
            data.extend_from_slice(self.data(*p));
        }
        let g = parts.iter().any(|p| self.requires_grad(*p));
        Ok(self.push(rows, d, data, g, Rule::StackRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let (n, d) = self.shape(a);
        if start >= end || end > n {
            return Err(Error::Dimension(format!(
                "slice_rows: range {start}..{end} out of bounds for {n} rows"
            )));
        }
        let data = self.data(a)[start * d..end * d].to_vec();
        let g = self.requires_grad(a);
        Ok(self.push(end - start, d, data, g, Rule::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let (n, d) = self.shape(a);
        if start >= end || end > d {
            return Err(Error::Dimension(format!(
                "slice_cols: range {start}..{end} out of bounds for {d} cols"
            )));
        }
        let w = end - start;
        let src = self.data(a);
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&src[i * d + start..i * d + end]);
        }
        let g = self.requires_grad(a);
        Ok(self.push(n, w, data, g, Rule::SliceCols(a, start)))
    }

    /// Row gather: `out[i] = a[indices[i]]`. Duplicate indices are allowed;
    /// backward scatter-adds.
    pub fn gather_rows(&mut self, a: TensorId, indices: Rc<Vec<usize>>) -> Result<TensorId> {
        let (n, d) = self.shape(a);
        if let Some(bad) = indices.iter().find(|i| **i >= n) {
            return Err(Error::Dimension(format!(
                "gather_rows: index {bad} out of bounds for {n} rows"
            )));
        }
        let src = self.data(a);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices.iter() {
            data.extend_from_slice(&src[i * d..i * d + d]);
        }
        let g = self.requires_grad(a);
        let rows = indices.len();
        Ok(self.push(rows, d, data, g, Rule::GatherRows(a, indices)))
    }

    /// Reinterpret the (row-major contiguous) data under a new shape.
    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if r * c != rows * cols {
            return Err(Error::Dimension(format!(
                "reshape: cannot view {:?} as ({rows}, {cols})",
                (r, c)
            )));
        }
        let data = self.data(a).to_vec();
        let g = self.requires_grad(a);
        Ok(self.push(rows, cols, data, g, Rule::Reshape(a)))
    }

    // ---- elementwise nonlinearities ----

    fn map_op(&mut self, a: TensorId, f: impl Fn(f64) -> f64, rule: Rule) -> TensorId {
        let (r, c) = self.shape(a);
        let data: Vec<f64> = self.data(a).iter().map(|x| f(*x)).collect();
        let g = self.requires_grad(a);
        self.push(r, c, data, g, rule)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.map_op(a, |x| if x > 0.0 { x } else { 0.0 }, Rule::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: TensorId, alpha: f64) -> TensorId {
        self.map_op(
            a,
            |x| if x >= 0.0 { x } else { alpha * x },
            Rule::LeakyRelu(a, alpha),
        )
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.map_op(a, sigmoid, Rule::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.map_op(a, f64::tanh, Rule::Tanh(a))
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        self.map_op(a, f64::exp, Rule::Exp(a))
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        self.map_op(a, f64::ln, Rule::Log(a))
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.data(a).iter().sum();
        let g = self.requires_grad(a);
        self.push(1, 1, vec![s], g, Rule::SumAll(a))
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let d = self.data(a);
        let s: f64 = d.iter().sum::<f64>() / d.len() as f64;
        let g = self.requires_grad(a);
        self.push(1, 1, vec![s], g, Rule::MeanAll(a))
    }

    /// Column-wise mean over rows: `[n×d] -> [1×d]`.
    pub fn mean_rows(&mut self, a: TensorId) -> TensorId {
        let (n, d) = self.shape(a);
        let src = self.data(a);
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += src[i * d + j];
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        let g = self.requires_grad(a);
        self.push(1, d, out, g, Rule::MeanRows(a))
    }

    /// Column-wise max over rows: `[n×d] -> [1×d]`. Ties go to the first row.
    pub fn max_rows(&mut self, a: TensorId) -> TensorId {
        let (n, d) = self.shape(a);
        let src = self.data(a);
        let mut out = vec![f64::NEG_INFINITY; d];
        let mut arg = vec![0usize; d];
        for i in 0..n {
            for j in 0..d {
                let v = src[i * d + j];
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        let g = self.requires_grad(a);
        self.push(1, d, out, g, Rule::MaxRows(a, arg))
    }

    /// Row-wise L2 normalization. A zero row stays zero.
    pub fn l2_normalize_rows(&mut self, a: TensorId) -> TensorId {
        let (n, d) = self.shape(a);
        let src = self.data(a);
        let mut out = vec![0.0; n * d];
        let mut norms = vec![0.0; n];
        for i in 0..n {
            let row = &src[i * d..i * d + d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[i] = norm;
            if norm > 0.0 {
                for j in 0..d {
                    out[i * d + j] = row[j] / norm;
                }
            }
        }
        let g = self.requires_grad(a);
        self.push(n, d, out, g, Rule::L2NormalizeRows(a, norms))
    }

    /// Row-wise log-softmax, computed with a max shift for stability.
    pub fn log_softmax_rows(&mut self, a: TensorId) -> TensorId {
        let (n, d) = self.shape(a);
        let src = self.data(a);
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &src[i * d..i * d + d];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..d {
                out[i * d + j] = row[j] - lse;
            }
        }
        let g = self.requires_grad(a);
        self.push(n, d, out, g, Rule::LogSoftmaxRows(a))
    }

    /// Mean negative log-likelihood of `targets` under row-wise
    /// log-probabilities: `-(1/n) Σ logp[i, t_i]`.
    pub fn cross_entropy(&mut self, log_probs: TensorId, targets: Rc<Vec<usize>>) -> Result<TensorId> {
        let (n, c) = self.shape(log_probs);
        if targets.len() != n {
            return Err(Error::Dimension(format!(
                "cross_entropy: {} targets for {n} rows",
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().find(|t| **t >= c) {
            return Err(Error::Dimension(format!(
                "cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        let src = self.data(log_probs);
        let mut s = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            s -= src[i * c + t];
        }
        s /= n as f64;
        let g = self.requires_grad(log_probs);
        Ok(self.push(1, 1, vec![s], g, Rule::CrossEntropy(log_probs, targets)))
    }

    // ---- fused graph / recurrent ops ----

    /// Per-row mean over a prescribed row set: `out[v] = mean(h[j] for j in
    /// lists[v])`. Every list must be non-empty; callers insert the fallback
    /// row themselves.
    pub fn neighbor_mean(&mut self, h: TensorId, lists: Rc<Vec<Vec<usize>>>) -> Result<TensorId> {
        let (n, d) = self.shape(h);
        let rows = lists.len();
        let src = self.data(h);
        let mut out = vec![0.0; rows * d];
        for (v, list) in lists.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Dimension(format!("neighbor_mean: empty list for row {v}")));
            }
            for &j in list {
                if j >= n {
                    return Err(Error::Dimension(format!(
                        "neighbor_mean: index {j} out of bounds for {n} rows"
                    )));
                }
                for k in 0..d {
                    out[v * d + k] += src[j * d + k];
                }
            }
            let inv = 1.0 / list.len() as f64;
            for k in 0..d {
                out[v * d + k] *= inv;
            }
        }
        let g = self.requires_grad(h);
        Ok(self.push(rows, d, out, g, Rule::NeighborMean(h, lists)))
    }

    /// Per-row element-wise max over a prescribed row set.
    pub fn neighbor_max(&mut self, h: TensorId, lists: Rc<Vec<Vec<usize>>>) -> Result<TensorId> {
        let (n, d) = self.shape(h);
        let rows = lists.len();
        let src = self.data(h);
        let mut out = vec![f64::NEG_INFINITY; rows * d];
        let mut arg = vec![0usize; rows * d];
        for (v, list) in lists.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Dimension(format!("neighbor_max: empty list for row {v}")));
            }
            for &j in list {
                if j >= n {
                    return Err(Error::Dimension(format!(
                        "neighbor_max: index {j} out of bounds for {n} rows"
                    )));
                }
                for k in 0..d {
                    let val = src[j * d + k];
                    if val > out[v * d + k] {
                        out[v * d + k] = val;
                        arg[v * d + k] = j;
                    }
                }
            }
        }
        let g = self.requires_grad(h);
        Ok(self.push(rows, d, out, g, Rule::NeighborMax(h, lists, arg)))
    }

    /// Fused LSTM cell step. `xp` is the precomputed input projection
    /// `x_t·W_ih + b` of shape `[1×4H]` with gate order `i, f, g, o`;
    /// `h_prev`, `c_prev` are `[1×H]` and `w_hh` is `[H×4H]`. Returns
    /// `[1×2H]` holding `h_t` then `c_t` (slice the halves apart).
    pub fn lstm_cell(
        &mut self,
        xp: TensorId,
        h_prev: TensorId,
        c_prev: TensorId,
        w_hh: TensorId,
    ) -> Result<TensorId> {
        let (_, four_h) = self.shape(xp);
        let hidden = four_h / 4;
        if four_h % 4 != 0
            || self.shape(h_prev) != (1, hidden)
            || self.shape(c_prev) != (1, hidden)
            || self.shape(w_hh) != (hidden, four_h)
        {
            return Err(Error::Dimension(format!(
                "lstm_cell: xp {:?}, h {:?}, c {:?}, w_hh {:?}",
                self.shape(xp),
                self.shape(h_prev),
                self.shape(c_prev),
                self.shape(w_hh)
            )));
        }
        let mut z = self.data(xp).to_vec();
        {
            let hd = self.data(h_prev);
            let wd = self.data(w_hh);
            for k in 0..hidden {
                let hv = hd[k];
                if hv != 0.0 {
                    let wrow = &wd[k * four_h..k * four_h + four_h];
                    for j in 0..four_h {
                        z[j] += hv * wrow[j];
                    }
                }
            }
        }
        let mut gates = vec![0.0; four_h];
        for k in 0..hidden {
            gates[k] = sigmoid(z[k]);
            gates[hidden + k] = sigmoid(z[hidden + k]);
            gates[2 * hidden + k] = z[2 * hidden + k].tanh();
            gates[3 * hidden + k] = sigmoid(z[3 * hidden + k]);
        }
        let cd = self.data(c_prev).to_vec();
        let mut out = vec![0.0; 2 * hidden];
        let mut tanh_c = vec![0.0; hidden];
        for k in 0..hidden {
            let c_new = gates[hidden + k] * cd[k] + gates[k] * gates[2 * hidden + k];
            let tc = c_new.tanh();
            tanh_c[k] = tc;
            out[k] = gates[3 * hidden + k] * tc;
            out[hidden + k] = c_new;
        }
        let g = self.requires_grad(xp)
            || self.requires_grad(h_prev)
            || self.requires_grad(c_prev)
            || self.requires_grad(w_hh);
        Ok(self.push(
            1,
            2 * hidden,
            out,
            g,
            Rule::LstmCell {
                xp,
                h_prev,
                c_prev,
                w_hh,
                cache: Box::new(LstmCache { gates, tanh_c }),
            },
        ))
    }

    /// Fused batch normalization over the rows of `x` (`[n×C]`), with
    /// per-channel `gamma`/`beta` (`[1×C]`). When `batch_stats` is false the
    /// provided running statistics normalize instead (evaluation path).
    pub fn batch_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
        batch_stats: bool,
    ) -> Result<(TensorId, Vec<f64>, Vec<f64>)> {
        let (n, c) = self.shape(x);
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return Err(self.dim_error("batch_norm", x, gamma));
        }
        let src = self.data(x);
        let (mean, var) = if batch_stats {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for i in 0..n {
                for j in 0..c {
                    mean[j] += src[i * c + j];
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            for i in 0..n {
                for j in 0..c {
                    let d = src[i * c + j] - mean[j];
                    var[j] += d * d;
                }
            }
            for v in &mut var {
                *v /= n as f64;
            }
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gd = self.data(gamma).to_vec();
        let bd = self.data(beta).to_vec();
        let mut xhat = vec![0.0; n * c];
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for j in 0..c {
                let h = (src[i * c + j] - mean[j]) * inv_std[j];
                xhat[i * c + j] = h;
                out[i * c + j] = gd[j] * h + bd[j];
            }
        }
        let g = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        let id = self.push(
            n,
            c,
            out,
            g,
            Rule::BatchNorm {
                x,
                gamma,
                beta,
                cache: Box::new(BnCache { xhat, inv_std, batch_stats }),
            },
        );
        Ok((id, mean, var))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Fills `grad` for every tensor that
    /// requires gradients and is reachable from `loss`; unreachable gradients
    /// stay zero. Consumes the recorded rules: a tape supports exactly one
    /// backward pass.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Dimension(format!(
                "backward: loss must be a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        if self.nodes[loss.0].grad.is_none() {
            return Err(Error::Dimension(
                "backward: loss does not require gradients".into(),
            ));
        }
        if self.consumed {
            return Err(Error::Dimension("backward: tape already consumed".into()));
        }
        self.consumed = true;
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() {
                continue;
            }
            self.step_backward(idx);
        }
        Ok(())
    }

    fn take_grad(&self, idx: usize) -> Vec<f64> {
        self.nodes[idx].grad.as_ref().unwrap().clone()
    }

    fn acc(&mut self, target: TensorId, f: impl FnOnce(&mut [f64])) {
        if let Some(g) = self.nodes[target.0].grad.as_mut() {
            f(g);
        }
    }

    fn step_backward(&mut self, idx: usize) {
        let dout = self.take_grad(idx);
        if dout.iter().all(|v| *v == 0.0) {
            return;
        }
        // Each rule is needed exactly once, so move it out of the node.
        let rule = std::mem::replace(&mut self.nodes[idx].rule, Rule::Leaf);
        match rule {
            Rule::Leaf => {}
            Rule::Matmul(a, b) => {
                let (n, k) = self.shape(a);
                let (_, m) = self.shape(b);
                let adata = self.nodes[a.0].data.clone();
                let bdata = self.nodes[b.0].data.clone();
                self.acc(a, |ga| {
                    for i in 0..n {
                        for kk in 0..k {
                            let brow = &bdata[kk * m..kk * m + m];
                            let drow = &dout[i * m..i * m + m];
                            let mut s = 0.0;
                            for j in 0..m {
                                s += drow[j] * brow[j];
                            }
                            ga[i * k + kk] += s;
                        }
                    }
                });
                self.acc(b, |gb| {
                    for i in 0..n {
                        for kk in 0..k {
                            let av = adata[i * k + kk];
                            if av != 0.0 {
                                let drow = &dout[i * m..i * m + m];
                                let grow = &mut gb[kk * m..kk * m + m];
                                for j in 0..m {
                                    grow[j] += av * drow[j];
                                }
                            }
                        }
                    }
                });
            }
            Rule::Add(a, b) => {
                self.acc(a, |g| g.iter_mut().zip(&dout).for_each(|(g, d)| *g += d));
                self.acc(b, |g| g.iter_mut().zip(&dout).for_each(|(g, d)| *g += d));
            }
            Rule::Sub(a, b) => {
                self.acc(a, |g| g.iter_mut().zip(&dout).for_each(|(g, d)| *g += d));
                self.acc(b, |g| g.iter_mut().zip(&dout).for_each(|(g, d)| *g -= d));
            }
            Rule::Mul(a, b) => {
                let ad = self.nodes[a.0].data.clone();
                let bd = self.nodes[b.0].data.clone();
                self.acc(a, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * bd[i];
                    }
                });
                self.acc(b, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * ad[i];
                    }
                });
            }
            Rule::AddRowBcast(a, b) => {
                let (n, d) = self.shape(a);
                self.acc(a, |g| g.iter_mut().zip(&dout).for_each(|(g, dv)| *g += dv));
                self.acc(b, |g| {
                    for i in 0..n {
                        for j in 0..d {
                            g[j] += dout[i * d + j];
                        }
                    }
                });
            }
            Rule::AddScalarBcast(a, s) => {
                self.acc(a, |g| g.iter_mut().zip(&dout).for_each(|(g, dv)| *g += dv));
                self.acc(s, |g| g[0] += dout.iter().sum::<f64>());
            }
            Rule::Scale(a, f) => {
                self.acc(a, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * f;
                    }
                });
            }
            Rule::ConcatCols(parts) => {
                let total = self.nodes[idx].cols;
                let n = self.nodes[idx].rows;
                let mut offset = 0;
                for p in parts {
                    let (_, c) = self.shape(p);
                    self.acc(p, |g| {
                        for i in 0..n {
                            for j in 0..c {
                                g[i * c + j] += dout[i * total + offset + j];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Rule::StackRows(parts) => {
                let d = self.nodes[idx].cols;
                let mut row = 0;
                for p in parts {
                    let (r, _) = self.shape(p);
                    self.acc(p, |g| {
                        g.iter_mut()
                            .zip(&dout[row * d..(row + r) * d])
                            .for_each(|(g, dv)| *g += dv);
                    });
                    row += r;
                }
            }
            Rule::SliceRows(a, start) => {
                let d = self.nodes[idx].cols;
                let r = self.nodes[idx].rows;
                self.acc(a, |g| {
                    g[start * d..(start + r) * d]
                        .iter_mut()
                        .zip(&dout)
                        .for_each(|(g, dv)| *g += dv);
                });
            }
            Rule::SliceCols(a, start) => {
                let w = self.nodes[idx].cols;
                let n = self.nodes[idx].rows;
                let (_, d) = self.shape(a);
                self.acc(a, |g| {
                    for i in 0..n {
                        for j in 0..w {
                            g[i * d + start + j] += dout[i * w + j];
                        }
                    }
                });
            }
            Rule::GatherRows(a, indices) => {
                let d = self.nodes[idx].cols;
                self.acc(a, |g| {
                    for (i, &src) in indices.iter().enumerate() {
                        for j in 0..d {
                            g[src * d + j] += dout[i * d + j];
                        }
                    }
                });
            }
            Rule::Reshape(a) => {
                self.acc(a, |g| g.iter_mut().zip(&dout).for_each(|(g, dv)| *g += dv));
            }
            Rule::Relu(a) => {
                let ad = self.nodes[a.0].data.clone();
                self.acc(a, |g| {
                    for i in 0..g.len() {
                        if ad[i] > 0.0 {
                            g[i] += dout[i];
                        }
                    }
                });
            }
            Rule::LeakyRelu(a, alpha) => {
                let ad = self.nodes[a.0].data.clone();
                self.acc(a, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * if ad[i] >= 0.0 { 1.0 } else { alpha };
                    }
                });
            }
            Rule::Sigmoid(a) => {
                let y = self.nodes[idx].data.clone();
                self.acc(a, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Rule::Tanh(a) => {
                let y = self.nodes[idx].data.clone();
                self.acc(a, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Rule::Exp(a) => {
                let y = self.nodes[idx].data.clone();
                self.acc(a, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * y[i];
                    }
                });
            }
            Rule::Log(a) => {
                let ad = self.nodes[a.0].data.clone();
                self.acc(a, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] / ad[i];
                    }
                });
            }
            Rule::SumAll(a) => {
                let d = dout[0];
                self.acc(a, |g| g.iter_mut().for_each(|g| *g += d));
            }
            Rule::MeanAll(a) => {
                let len = self.nodes[a.0].data.len() as f64;
                let d = dout[0] / len;
                self.acc(a, |g| g.iter_mut().for_each(|g| *g += d));
            }
            Rule::MeanRows(a) => {
                let (n, d) = self.shape(a);
                let inv = 1.0 / n as f64;
                self.acc(a, |g| {
                    for i in 0..n {
                        for j in 0..d {
                            g[i * d + j] += dout[j] * inv;
                        }
                    }
                });
            }
            Rule::MaxRows(a, arg) => {
                let (_, d) = self.shape(a);
                self.acc(a, |g| {
                    for j in 0..d {
                        g[arg[j] * d + j] += dout[j];
                    }
                });
            }
            Rule::L2NormalizeRows(a, norms) => {
                let (n, d) = self.shape(a);
                let y = self.nodes[idx].data.clone();
                self.acc(a, |g| {
                    for i in 0..n {
                        let norm = norms[i];
                        if norm == 0.0 {
                            continue;
                        }
                        let yrow = &y[i * d..i * d + d];
                        let drow = &dout[i * d..i * d + d];
                        let dot: f64 = yrow.iter().zip(drow).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            g[i * d + j] += (drow[j] - yrow[j] * dot) / norm;
                        }
                    }
                });
            }
            Rule::LogSoftmaxRows(a) => {
                let (n, d) = self.shape(a);
                let y = self.nodes[idx].data.clone();
                self.acc(a, |g| {
                    for i in 0..n {
                        let drow = &dout[i * d..i * d + d];
                        let s: f64 = drow.iter().sum();
                        for j in 0..d {
                            g[i * d + j] += drow[j] - y[i * d + j].exp() * s;
                        }
                    }
                });
            }
            Rule::CrossEntropy(a, targets) => {
                let (n, c) = self.shape(a);
                let scale = dout[0] / n as f64;
                self.acc(a, |g| {
                    for (i, &t) in targets.iter().enumerate() {
                        g[i * c + t] -= scale;
                    }
                });
            }
            Rule::NeighborMean(h, lists) => {
                let d = self.nodes[idx].cols;
                self.acc(h, |g| {
                    for (v, list) in lists.iter().enumerate() {
                        let inv = 1.0 / list.len() as f64;
                        for &j in list {
                            for k in 0..d {
                                g[j * d + k] += dout[v * d + k] * inv;
                            }
                        }
                    }
                });
            }
            Rule::NeighborMax(h, lists, arg) => {
                let rows = lists.len();
                let d = self.nodes[idx].cols;
                self.acc(h, |g| {
                    for v in 0..rows {
                        for k in 0..d {
                            g[arg[v * d + k] * d + k] += dout[v * d + k];
                        }
                    }
                });
            }
            Rule::LstmCell { xp, h_prev, c_prev, w_hh, cache } => {
                let hidden = self.nodes[idx].cols / 2;
                let LstmCache { gates, tanh_c } = *cache;
                let cprev_data = self.nodes[c_prev.0].data.clone();
                let hprev_data = self.nodes[h_prev.0].data.clone();
                let whh_data = self.nodes[w_hh.0].data.clone();
                let four_h = 4 * hidden;

                let mut dz = vec![0.0; four_h];
                let mut dc_prev_local = vec![0.0; hidden];
                for k in 0..hidden {
                    let (i_g, f_g, g_g, o_g) = (
                        gates[k],
                        gates[hidden + k],
                        gates[2 * hidden + k],
                        gates[3 * hidden + k],
                    );
                    let dh = dout[k];
                    let dc_direct = dout[hidden + k];
                    let tc = tanh_c[k];
                    let dc_total = dc_direct + dh * o_g * (1.0 - tc * tc);
                    let d_o = dh * tc;
                    let d_i = dc_total * g_g;
                    let d_f = dc_total * cprev_data[k];
                    let d_g = dc_total * i_g;
                    dc_prev_local[k] = dc_total * f_g;
                    dz[k] = d_i * i_g * (1.0 - i_g);
                    dz[hidden + k] = d_f * f_g * (1.0 - f_g);
                    dz[2 * hidden + k] = d_g * (1.0 - g_g * g_g);
                    dz[3 * hidden + k] = d_o * o_g * (1.0 - o_g);
                }
                self.acc(xp, |g| g.iter_mut().zip(&dz).for_each(|(g, d)| *g += d));
                self.acc(c_prev, |g| {
                    g.iter_mut().zip(&dc_prev_local).for_each(|(g, d)| *g += d)
                });
                self.acc(h_prev, |g| {
                    for k in 0..hidden {
                        let wrow = &whh_data[k * four_h..k * four_h + four_h];
                        let mut s = 0.0;
                        for j in 0..four_h {
                            s += dz[j] * wrow[j];
                        }
                        g[k] += s;
                    }
                });
                self.acc(w_hh, |g| {
                    for k in 0..hidden {
                        let hv = hprev_data[k];
                        if hv != 0.0 {
                            let grow = &mut g[k * four_h..k * four_h + four_h];
                            for j in 0..four_h {
                                grow[j] += hv * dz[j];
                            }
                        }
                    }
                });
            }
            Rule::BatchNorm { x, gamma, beta, cache } => {
                let (n, c) = self.shape(x);
                let BnCache { xhat, inv_std, batch_stats } = *cache;
                let gamma_data = self.nodes[gamma.0].data.clone();

                self.acc(beta, |g| {
                    for i in 0..n {
                        for j in 0..c {
                            g[j] += dout[i * c + j];
                        }
                    }
                });
                self.acc(gamma, |g| {
                    for i in 0..n {
                        for j in 0..c {
                            g[j] += dout[i * c + j] * xhat[i * c + j];
                        }
                    }
                });
                if self.nodes[x.0].grad.is_some() {
                    let mut dx = vec![0.0; n * c];
                    if batch_stats {
                        // Batch-statistics path: mean/var depend on x.
                        let mut sum_d = vec![0.0; c];
                        let mut sum_dx = vec![0.0; c];
                        for i in 0..n {
                            for j in 0..c {
                                let dxh = dout[i * c + j] * gamma_data[j];
                                sum_d[j] += dxh;
                                sum_dx[j] += dxh * xhat[i * c + j];
                            }
                        }
                        let m = n as f64;
                        for i in 0..n {
                            for j in 0..c {
                                let dxh = dout[i * c + j] * gamma_data[j];
                                dx[i * c + j] = inv_std[j]
                                    * (dxh - sum_d[j] / m - xhat[i * c + j] * sum_dx[j] / m);
                            }
                        }
                    } else {
                        for i in 0..n {
                            for j in 0..c {
                                dx[i * c + j] = dout[i * c + j] * gamma_data[j] * inv_std[j];
                            }
                        }
                    }
                    self.acc(x, |g| g.iter_mut().zip(&dx).for_each(|(g, d)| *g += d));
                }
            }
        }
    }
}
