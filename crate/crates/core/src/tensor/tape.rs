use super::kernels::{self, axis_split};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward-pass corruptions, used to prove that the gradient
/// checks in the self-test actually detect broken derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Softmax backward drops its centering term.
    SoftmaxBackward,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    Sum(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Relu(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of one forward pass.
///
/// Ops append nodes in execution order; [`Tape::backward`] walks them in
/// reverse and accumulates into the `grad` slot of every leaf that was
/// registered with `requires_grad`. A tape supports exactly one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    fault: Option<Fault>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Option<Fault>) -> Self {
        Tape {
            fault,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        tensor.clear_grad();
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Records a trainable leaf regardless of the tensor's flag.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        self.leaf(tensor.clone().with_requires_grad(true))
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated into a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Moves a leaf's tensor (with its gradient slot) out of the tape.
    pub fn take_leaf(&mut self, v: Var) -> Tensor {
        let node = &mut self.nodes[v.0];
        let placeholder = Tensor::scalar(0.0);
        std::mem::replace(&mut node.value, placeholder)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.consumed {
            return Err(Error::Usage(format!(
                "{op_name} recorded on a tape that has already been replayed"
            )));
        }
        check_finite(op_name, value.data())?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(value, op, needs_grad))
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Usage(format!("variable {} is not on this tape", v.0)))
        }
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        self.check_var(v)?;
        self.value(v)
            .dims2()
            .map_err(|_| Error::dim(op, format!("expected a matrix, got shape {:?}", self.value(v).shape())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix("matmul", a)?;
        let (k2, n) = self.matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}×{k}] · [{k2}×{n}]")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.record("matmul", Tensor::new(&[m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y)?;
        self.record("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y)?;
        self.record("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y)?;
        self.record("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.check_var(a)?;
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|x| x * factor).collect())?;
        self.record("scale", out, Op::Scale(a, factor), &[a])
    }

    /// Adds a length-`n` vector to every row of an `[m×n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.matrix("add_row", a)?;
        self.check_var(row)?;
        let r = self.value(row).data();
        if r.len() != n {
            return Err(Error::dim("add_row", format!("row of {} values for {n} columns", r.len())));
        }
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, &b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        self.record("add_row", Tensor::new(&[m, n], out)?, Op::AddRow(a, row), &[a, row])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix("transpose", a)?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.record("transpose", Tensor::new(&[n, m], out)?, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check_var(a)?;
        let out = self
            .value(a)
            .reshaped(shape)
            .map_err(|e| Error::dim("reshape", e.to_string()))?;
        self.record("reshape", out, Op::Reshape(a), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let (_, n) = self.matrix("concat_rows", first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix("concat_rows", p)?;
            if c != n {
                return Err(Error::dim("concat_rows", format!("column counts {n} and {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        self.record("concat_rows", Tensor::new(&[rows, n], out)?, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let (m, _) = self.matrix("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix("concat_cols", p)?;
            if r != m {
                return Err(Error::dim("concat_cols", format!("row counts {m} and {r}")));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.record("concat_cols", Tensor::new(&[m, n], out)?, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix("slice_rows", a)?;
        if len == 0 || start + len > m {
            return Err(Error::dim("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let out = self.value(a).data()[start * n..(start + len) * n].to_vec();
        self.record("slice_rows", Tensor::new(&[len, n], out)?, Op::SliceRows(a, start), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix("slice_cols", a)?;
        if len == 0 || start + len > n {
            return Err(Error::dim("slice_cols", format!("cols {start}..{} of {n}", start + len)));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        self.record("slice_cols", Tensor::new(&[m, len], out)?, Op::SliceCols(a, start), &[a])
    }

    /// Column-wise mean over rows: `[m×n] → [1×n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix("mean_rows", a)?;
        let mut out = vec![0.0; n];
        for row in self.value(a).data().chunks(n) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        self.record("mean_rows", Tensor::new(&[1, n], out)?, Op::MeanRows(a), &[a])
    }

    /// Column-wise max over rows: `[m×n] → [1×n]`. Ties route the gradient
    /// to the first maximal row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.matrix("max_rows", a)?;
        let src = self.value(a).data();
        let mut out = src[..n].to_vec();
        let mut arg = vec![0usize; n];
        for (i, row) in src.chunks(n).enumerate().skip(1) {
            for j in 0..n {
                if row[j] > out[j] {
                    out[j] = row[j];
                    arg[j] = i;
                }
            }
        }
        self.record("max_rows", Tensor::new(&[1, n], out)?, Op::MaxRows(a, arg), &[a])
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let s = self.value(a).data().iter().sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Softmax along `axis`, stabilized by subtracting the running max.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_var(a)?;
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(Error::dim("softmax", format!("axis {axis} for rank {}", t.rank())));
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| src[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = (src[idx(l)] - max).exp();
                    out[idx(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    out[idx(l)] /= total;
                }
            }
        }
        let shape = t.shape().to_vec();
        self.record("softmax", Tensor::new(&shape, out)?, Op::Softmax(a, axis), &[a])
    }

    /// Per-row normalization of an `[m×d]` matrix followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Usage(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (m, d) = self.matrix("layer_norm", x)?;
        self.check_var(gain)?;
        self.check_var(bias)?;
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::dim("layer_norm", format!("gain/bias must have {d} values")));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * d];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        };
        self.record("layer_norm", Tensor::new(&[m, d], out)?, op, &[x, gain, bias])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        self.check_var(a)?;
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&x| f(x)).collect())?;
        self.record(name, out, op, &[a])
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary("gelu", a, kernels::gelu, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Mean softmax cross-entropy of `[B×K]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = self.matrix("cross_entropy", logits)?;
        if labels.len() != b {
            return Err(Error::dim("cross_entropy", format!("{b} logit rows, {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Usage(format!("label {bad} out of range for {k} classes")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &src[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|z| (z - max).exp()).sum();
            let log_z = max + total.ln();
            loss += log_z - row[label];
            for j in 0..k {
                probs[i * k + j] = (row[j] - log_z).exp();
            }
        }
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.record("cross_entropy", Tensor::scalar(loss / b as f64), op, &[logits])
    }

    /// Replays the tape in reverse from a scalar `loss`, storing gradients in
    /// the `grad` slot of every `requires_grad` leaf. Gradients from fan-out
    /// add. A second call on the same tape is a usage error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage("tape has already been replayed".into()));
        }
        self.check_var(loss)?;
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                check_finite("backward", &g)?;
                self.nodes[id].value.set_grad(g)?;
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };

        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().expect("matrix");
                let n = val(*b).shape()[1];
                acc(*a, &mut |s| kernels::matmul_nt_acc(g, val(*b).data(), s, m, k, n));
                acc(*b, &mut |s| kernels::matmul_tn_acc(val(*a).data(), g, s, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| {
                    for ((o, x), y) in s.iter_mut().zip(g).zip(db) {
                        *o += x * y;
                    }
                });
                acc(*b, &mut |s| {
                    for ((o, x), y) in s.iter_mut().zip(g).zip(da) {
                        *o += x * y;
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(o, x)| *o += f * x)),
            Op::AddRow(a, row) => {
                acc(*a, &mut |s| add_into(s, g));
                let n = val(*row).numel();
                acc(*row, &mut |s| {
                    for chunk in g.chunks(n) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = val(*a).dims2().expect("matrix");
                acc(*a, &mut |s| {
                    for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(*p).numel();
                    acc(*p, &mut |s| add_into(s, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let n = nodes[id].value.shape()[1];
                let mut col = 0;
                for p in parts {
                    let (m, w) = val(*p).dims2().expect("matrix");
                    acc(*p, &mut |s| {
                        for i in 0..m {
                            add_into(&mut s[i * w..(i + 1) * w], &g[i * n + col..i * n + col + w]);
                        }
                    });
                    col += w;
                }
            }
            Op::SliceRows(a, start) => {
                let n = val(*a).shape()[1];
                acc(*a, &mut |s| add_into(&mut s[start * n..start * n + g.len()], g));
            }
            Op::SliceCols(a, start) => {
                let (m, n) = val(*a).dims2().expect("matrix");
                let len = g.len() / m;
                acc(*a, &mut |s| {
                    for i in 0..m {
                        add_into(&mut s[i * n + start..i * n + start + len], &g[i * len..(i + 1) * len]);
                    }
                });
            }
            Op::MeanRows(a) => {
                let (m, n) = val(*a).dims2().expect("matrix");
                let inv = 1.0 / m as f64;
                acc(*a, &mut |s| {
                    for chunk in s.chunks_mut(n) {
                        chunk.iter_mut().zip(g).for_each(|(o, x)| *o += inv * x);
                    }
                });
            }
            Op::MaxRows(a, arg) => {
                let n = val(*a).shape()[1];
                acc(*a, &mut |s| {
                    for (j, &i) in arg.iter().enumerate() {
                        s[i * n + j] += g[j];
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|o| *o += g[0])),
            Op::Softmax(a, axis) => {
                let y = nodes[id].value.data();
                let (outer, len, inner) = axis_split(val(*a).shape(), *axis);
                let faulty = self.fault == Some(Fault::SoftmaxBackward);
                acc(*a, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 = if faulty {
                                0.0
                            } else {
                                (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum()
                            };
                            for l in 0..len {
                                s[idx(l)] += y[idx(l)] * (g[idx(l)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (m, d) = val(*x).dims2().expect("matrix");
                let gv = val(*gain).data();
                if wants(*x) {
                    acc(*x, &mut |s| {
                        for i in 0..m {
                            let gr = &g[i * d..(i + 1) * d];
                            let xh = &xhat[i * d..(i + 1) * d];
                            let mut mean_dxh = 0.0;
                            let mut mean_dxh_xh = 0.0;
                            for j in 0..d {
                                let dxh = gr[j] * gv[j];
                                mean_dxh += dxh;
                                mean_dxh_xh += dxh * xh[j];
                            }
                            mean_dxh /= d as f64;
                            mean_dxh_xh /= d as f64;
                            for j in 0..d {
                                let dxh = gr[j] * gv[j];
                                s[i * d + j] += rstd[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                            }
                        }
                    });
                }
                acc(*gain, &mut |s| {
                    for (gr, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            s[j] += gr[j] * xh[j];
                        }
                    }
                });
                acc(*bias, &mut |s| {
                    for gr in g.chunks(d) {
                        add_into(s, gr);
                    }
                });
            }
            Op::Gelu(a) => {
                let xs = val(*a).data();
                acc(*a, &mut |s| {
                    for ((o, &x), &dy) in s.iter_mut().zip(xs).zip(g) {
                        *o += dy * kernels::gelu_grad(x);
                    }
                });
            }
            Op::Relu(a) => {
                let xs = val(*a).data();
                acc(*a, &mut |s| {
                    for ((o, &x), &dy) in s.iter_mut().zip(xs).zip(g) {
                        if x > 0.0 {
                            *o += dy;
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = val(*logits).shape()[1];
                let scale = g[0] / labels.len() as f64;
                acc(*logits, &mut |s| {
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let target = if j == label { 1.0 } else { 0.0 };
                            s[i * k + j] += scale * (probs[i * k + j] - target);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let i = t.constant(m(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let a = t.constant(m(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let c = t.matmul(i, a).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dot_product_matmul() {
        let mut t = Tape::new();
        let a = t.constant(m(&[vec![1.0, 2.0]]));
        let b = t.constant(m(&[vec![3.0], vec![4.0]]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_closed_forms() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let s = t.softmax(a, 0).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);

        let b = t.constant(Tensor::vector(vec![0.0, 3f64.ln()]).unwrap());
        let s = t.softmax(b, 0).unwrap();
        assert_relative_eq!(t.value(s).data()[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(t.value(s).data()[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.3, 2.9]).unwrap());
        let b = t.constant(Tensor::vector(vec![101.3, 102.9]).unwrap());
        let (sa, sb) = (t.softmax(a, 0).unwrap(), t.softmax(b, 0).unwrap());
        assert!(t.value(sa).max_abs_diff(t.value(sb)) < 1e-12);
    }

    #[test]
    fn softmax_bad_axis() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 2]));
        assert!(t.softmax(a, 2).is_err());
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut t = Tape::new();
        let x = t.constant(m(&[vec![3.0, 3.0, 3.0]]));
        let g = t.constant(Tensor::full(&[3], 1.0));
        let b = t.constant(Tensor::zeros(&[3]));
        let y = t.layer_norm(x, g, b, 1e-5).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_normalized_row() {
        let mut t = Tape::new();
        let x = t.constant(m(&[vec![1.0, -1.0]]));
        let g = t.constant(Tensor::full(&[2], 1.0));
        let b = t.constant(Tensor::zeros(&[2]));
        let y = t.layer_norm(x, g, b, 1e-12).unwrap();
        assert_relative_eq!(t.value(y).data()[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(t.value(y).data()[1], -1.0, epsilon = 1e-10);
        assert!(t.layer_norm(x, g, b, 0.0).is_err());
    }

    #[test]
    fn gelu_at_zero_and_mean_of_single_row() {
        let mut t = Tape::new();
        let x = t.constant(m(&[vec![0.0, 2.5, -1.0]]));
        let y = t.gelu(x).unwrap();
        assert_eq!(t.value(y).data()[0], 0.0);
        let mr = t.mean_rows(x).unwrap();
        assert_eq!(t.value(mr).data(), t.value(x).data());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.param(&m(&[vec![1.0, -2.0], vec![0.5, 7.0]]));
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let mut t = Tape::new();
        let data = vec![1.0, -2.0, 0.5];
        let x = t.param(&Tensor::vector(data.clone()).unwrap());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq).unwrap();
        t.backward(s).unwrap();
        let expect: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(t.grad(x).unwrap(), expect.as_slice());
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(3x + x) → grad 4 everywhere
        let mut t = Tape::new();
        let x = t.param(&Tensor::vector(vec![0.3, -0.7]).unwrap());
        let a = t.scale(x, 3.0).unwrap();
        let b = t.add(a, x).unwrap();
        let s = t.sum(b).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[4.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_reuse() {
        let mut t = Tape::new();
        let x = t.param(&Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(t.backward(x), Err(Error::Usage(_))));
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(Error::Usage(_))));
        assert!(t.sum(x).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::vector(vec![1.0]).unwrap());
        let p = t.param(&Tensor::vector(vec![2.0]).unwrap());
        let y = t.mul(c, p).unwrap();
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(p).unwrap(), &[1.0]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![f64::MAX]).unwrap());
        assert!(matches!(t.scale(x, 10.0), Err(Error::NonFinite { op: "scale" })));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(&[3, 2]));
        let l = t.cross_entropy(z, &[0, 1, 1]).unwrap();
        assert_relative_eq!(t.value(l).data()[0], std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(matches!(t.cross_entropy(z, &[0, 2, 1]), Err(Error::Usage(_))));
    }

    #[test]
    fn cross_entropy_vanishes_with_margin() {
        let mut losses = Vec::new();
        for margin in [1.0, 5.0, 20.0, 40.0] {
            let mut t = Tape::new();
            let z = t.constant(m(&[vec![margin, 0.0]]));
            let l = t.cross_entropy(z, &[0]).unwrap();
            losses.push(t.value(l).data()[0]);
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]));
        assert!(losses[3] < 1e-15);
    }

    #[test]
    fn concat_and_slice_cols_roundtrip() {
        let mut t = Tape::new();
        let x = t.constant(m(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]));
        let a = t.slice_cols(x, 0, 1).unwrap();
        let b = t.slice_cols(x, 1, 2).unwrap();
        let y = t.concat_cols(&[a, b]).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let r = t.slice_rows(x, 1, 1).unwrap();
        assert_eq!(t.value(r).data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn max_rows_value() {
        let mut t = Tape::new();
        let x = t.constant(m(&[vec![1.0, 3.0], vec![3.0, 1.0]]));
        let y = t.max_rows(x).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 3.0]);
    }
}
