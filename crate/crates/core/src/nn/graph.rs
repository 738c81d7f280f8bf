//! Eager define-by-run graph with reverse-mode differentiation.
//!
//! Every op computes its value immediately and records enough to run the
//! chain rule later. [`Graph::backward`] does a numeric reverse sweep;
//! [`Graph::grad`] instead appends the vector-Jacobian products as new graph
//! nodes, so a gradient can itself be differentiated (needed by the gradient
//! penalty).

use std::collections::HashMap;

use super::kernels::{col2im, gemm, im2col, Windows};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{bail, Result};

/// A node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv1d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvT1d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul(Var, Var),
    Transpose(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<f64>, train: bool },
    Relu(Var),
    LeakyRelu(Var, f64),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Tensor),
    AddChannel { x: Var, e: Var },
    Concat(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    Reshape(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    Sum(Var),
    Mean(Var),
    SumPerItem(Var),
    Broadcast(Var),
    Sqrt(Var),
    Square(Var),
    Softmax(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
    MseLoss(Var, Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Param(_) => vec![],
            Conv1d { x, w, b, .. } | ConvT1d { x, w, b, .. } | Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | MseLoss(a, b) => vec![*a, *b],
            AddChannel { x, e } => vec![*x, *e],
            Concat(parts) => parts.clone(),
            Transpose(x) | Relu(x) | LeakyRelu(x, _) | Scale(x, _) | AddScalar(x)
            | MulConst(x, _) | Reshape(x) | GlobalAvgPool(x) | Sum(x) | Mean(x)
            | SumPerItem(x) | Broadcast(x) | Sqrt(x) | Square(x) | Softmax(x) => vec![*x],
            SliceChannels { x, .. } | MaxPool { x, .. } => vec![*x],
            SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Param(_) => "param",
            Conv1d { .. } => "conv1d",
            ConvT1d { .. } => "conv_transpose1d",
            Linear { .. } => "linear",
            MatMul(..) => "matmul",
            Transpose(_) => "transpose",
            BatchNorm { .. } => "batchnorm1d",
            Relu(_) => "relu",
            LeakyRelu(..) => "leaky_relu",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Scale(..) => "scale",
            AddScalar(_) => "add_scalar",
            MulConst(..) => "mul_const",
            AddChannel { .. } => "add_channel",
            Concat(_) => "concat",
            SliceChannels { .. } => "slice_channels",
            Reshape(_) => "reshape",
            MaxPool { .. } => "max_pool1d",
            GlobalAvgPool(_) => "global_avg_pool",
            Sum(_) => "sum",
            Mean(_) => "mean",
            SumPerItem(_) => "sum_per_item",
            Broadcast(_) => "broadcast",
            Sqrt(_) => "sqrt",
            Square(_) => "square",
            Softmax(_) => "softmax",
            SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            MseLoss(..) => "mse_loss",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Elements per channel the statistics were taken over.
    pub count: usize,
}

/// Gradients of the leaves created with [`Graph::input_with_grad`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v.0)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn dims3(s: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *s {
        [a, b, c] => Ok((a, b, c)),
        _ => bail!(Shape, "{what} expects a [batch, channels, len] tensor, got {s:?}"),
    }
}

fn dims2(s: &[usize], what: &str) -> Result<(usize, usize)> {
    match *s {
        [a, b] => Ok((a, b)),
        _ => bail!(Shape, "{what} expects a 2-D tensor, got {s:?}"),
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {}", op.name());
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient [`Graph::backward`] reports.
    pub fn input_with_grad(&mut self, value: Tensor) -> Var {
        let v = self.input(value);
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// The node for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(id),
            needs_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn check_bias(&self, b: Option<Var>, n: usize, what: &str) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).shape() != [n] {
                bail!(Shape, "{what} bias has shape {:?}, expected [{n}]", self.value(b).shape());
            }
        }
        Ok(())
    }

    /// Cross-correlation. `x: [batch, c_in, len]`, `w: [c_out, c_in, kernel]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (bsz, ci, len) = dims3(self.value(x).shape(), "conv1d input")?;
        let (co, wci, k) = dims3(self.value(w).shape(), "conv1d weight")?;
        if wci != ci {
            bail!(Shape, "conv1d input has {ci} channels, weight expects {wci}");
        }
        if stride == 0 {
            bail!(InvalidArgument, "conv1d stride must be at least 1");
        }
        if len + 2 * pad < k {
            bail!(Shape, "conv1d kernel {k} does not fit padded length {}", len + 2 * pad);
        }
        self.check_bias(b, co, "conv1d")?;
        let lo = (len + 2 * pad - k) / stride + 1;
        let win = Windows { channels: ci, length: len, kernel: k, stride, pad, positions: lo };
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; bsz * co * lo];
        let mut cols = vec![0.0; win.cols_len()];
        for bi in 0..bsz {
            im2col(&xd[bi * ci * len..(bi + 1) * ci * len], &win, &mut cols);
            gemm(co, ci * k, lo, wd, false, &cols, false, &mut out[bi * co * lo..(bi + 1) * co * lo], 0.0);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), bsz, co, lo);
        }
        let value = Tensor::new(vec![bsz, co, lo], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, stride, pad }))
    }

    /// Transposed convolution with the standard output length
    /// `(len - 1) * stride - 2 * pad + kernel`. `w: [c_in, c_out, kernel]`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let len = dims3(self.value(x).shape(), "conv_transpose1d input")?.2;
        let k = dims3(self.value(w).shape(), "conv_transpose1d weight")?.2;
        if len == 0 || (len - 1) * stride + k < 2 * pad + 1 {
            bail!(Shape, "conv_transpose1d with len {len}, kernel {k}, pad {pad} has empty output");
        }
        let out_len = (len - 1) * stride + k - 2 * pad;
        self.conv_transpose1d_to_len(x, w, b, stride, pad, out_len)
    }

    /// Transposed convolution onto an explicit output length.
    pub fn conv_transpose1d_to_len(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        out_len: usize,
    ) -> Result<Var> {
        let (bsz, ci, len) = dims3(self.value(x).shape(), "conv_transpose1d input")?;
        let (wci, co, k) = dims3(self.value(w).shape(), "conv_transpose1d weight")?;
        if wci != ci {
            bail!(Shape, "conv_transpose1d input has {ci} channels, weight expects {wci}");
        }
        if stride == 0 {
            bail!(InvalidArgument, "conv_transpose1d stride must be at least 1");
        }
        if out_len + 2 * pad < k || (out_len + 2 * pad - k) / stride + 1 != len {
            bail!(
                Shape,
                "conv_transpose1d output length {out_len} is inconsistent with input length {len}"
            );
        }
        self.check_bias(b, co, "conv_transpose1d")?;
        let win = Windows { channels: co, length: out_len, kernel: k, stride, pad, positions: len };
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; bsz * co * out_len];
        let mut cols = vec![0.0; win.cols_len()];
        for bi in 0..bsz {
            gemm(co * k, ci, len, wd, true, &xd[bi * ci * len..(bi + 1) * ci * len], false, &mut cols, 0.0);
            col2im(&cols, &win, &mut out[bi * co * out_len..(bi + 1) * co * out_len]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), bsz, co, out_len);
        }
        let value = Tensor::new(vec![bsz, co, out_len], out)?;
        Ok(self.push(value, Op::ConvT1d { x, w, b, stride, pad }))
    }

    /// `x: [batch, in]`, `w: [out, in]` gives `x w^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (bsz, i) = dims2(self.value(x).shape(), "linear input")?;
        let (o, wi) = dims2(self.value(w).shape(), "linear weight")?;
        if wi != i {
            bail!(Shape, "linear input has {i} features, weight expects {wi}");
        }
        self.check_bias(b, o, "linear")?;
        let mut out = vec![0.0; bsz * o];
        gemm(bsz, i, o, self.value(x).data(), false, self.value(w).data(), true, &mut out, 0.0);
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bd).for_each(|(v, b)| *v += b);
            }
        }
        let value = Tensor::new(vec![bsz, o], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a).shape(), "matmul lhs")?;
        let (k2, n) = dims2(self.value(b).shape(), "matmul rhs")?;
        if k != k2 {
            bail!(Shape, "matmul inner dimensions differ: {k} vs {k2}");
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(a).shape(), "transpose")?;
        let value = transpose2(self.value(a).data(), m, n);
        Ok(self.push(Tensor::new(vec![n, m], value)?, Op::Transpose(a)))
    }

    /// Per-channel normalisation with batch statistics over (batch, len).
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (bsz, c, len) = dims3(self.value(x).shape(), "batchnorm1d input")?;
        let count = bsz * len;
        if count < 2 {
            bail!(InvalidArgument, "batchnorm1d in train mode needs batch*len >= 2 per channel, got {count}");
        }
        let xd = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for bi in 0..bsz {
            for ch in 0..c {
                let row = &xd[(bi * c + ch) * len..(bi * c + ch + 1) * len];
                mean[ch] += row.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for bi in 0..bsz {
            for ch in 0..c {
                let row = &xd[(bi * c + ch) * len..(bi * c + ch + 1) * len];
                var[ch] += row.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self.batchnorm_apply(x, gamma, beta, &mean, inv_std, true)?;
        Ok((out, BatchStats { mean, var, count }))
    }

    /// Normalisation with fixed statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.batchnorm_apply(x, gamma, beta, mean, inv_std, false)
    }

    fn batchnorm_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        train: bool,
    ) -> Result<Var> {
        let (bsz, c, len) = dims3(self.value(x).shape(), "batchnorm1d input")?;
        for (v, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.value(v).shape() != [c] {
                bail!(Shape, "batchnorm1d {what} has shape {:?}, expected [{c}]", self.value(v).shape());
            }
        }
        if mean.len() != c || inv_std.len() != c {
            bail!(Shape, "batchnorm1d statistics must have {c} entries");
        }
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..bsz {
            for ch in 0..c {
                let r = (bi * c + ch) * len..(bi * c + ch + 1) * len;
                for i in r {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gd[ch] * h + bd[ch];
                }
            }
        }
        let shape = vec![bsz, c, len];
        let xhat = Tensor::new(shape.clone(), xhat)?;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(x, slope))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            bail!(
                Shape,
                "{what} operands differ in shape: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            );
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        self.push(value, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v + s);
        self.push(value, Op::AddScalar(x))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let value = self.value(x).zip_map(&c, |a, b| a * b)?;
        Ok(self.push(value, Op::MulConst(x, c)))
    }

    /// Adds `e: [batch, c]` to every time step of `x: [batch, c, len]`.
    pub fn add_channel(&mut self, x: Var, e: Var) -> Result<Var> {
        let (bsz, c, len) = dims3(self.value(x).shape(), "add_channel input")?;
        if self.value(e).shape() != [bsz, c] {
            bail!(Shape, "add_channel needs [{bsz}, {c}], got {:?}", self.value(e).shape());
        }
        let mut out = self.value(x).data().to_vec();
        let ed = self.value(e).data();
        for (i, row) in out.chunks_mut(len).enumerate() {
            row.iter_mut().for_each(|v| *v += ed[i]);
        }
        let value = Tensor::new(vec![bsz, c, len], out)?;
        Ok(self.push(value, Op::AddChannel { x, e }))
    }

    /// Concatenates `[batch, c_i, len]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            bail!(InvalidArgument, "concat of zero tensors");
        }
        let (bsz, _, len) = dims3(self.value(parts[0]).shape(), "concat input")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (b, c, l) = dims3(self.value(p).shape(), "concat input")?;
            if b != bsz || l != len {
                bail!(Shape, "concat inputs disagree: [{bsz}, _, {len}] vs [{b}, {c}, {l}]");
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(bsz * total * len);
        for bi in 0..bsz {
            for (&p, &c) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[bi * c * len..(bi + 1) * c * len]);
            }
        }
        let value = Tensor::new(vec![bsz, total, len], out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Channels `start..start + n` of `x: [batch, c, len]`.
    pub fn slice_channels(&mut self, x: Var, start: usize, n: usize) -> Result<Var> {
        let (bsz, c, len) = dims3(self.value(x).shape(), "slice_channels input")?;
        if start + n > c {
            bail!(Shape, "channel slice {start}..{} out of range for {c} channels", start + n);
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(bsz * n * len);
        for bi in 0..bsz {
            out.extend_from_slice(&xd[(bi * c + start) * len..(bi * c + start + n) * len]);
        }
        let value = Tensor::new(vec![bsz, n, len], out)?;
        Ok(self.push(value, Op::SliceChannels { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Non-overlapping max pooling with window and stride `k`; a trailing
    /// partial window is dropped.
    pub fn max_pool1d(&mut self, x: Var, k: usize) -> Result<Var> {
        let (bsz, c, len) = dims3(self.value(x).shape(), "max_pool1d input")?;
        if k == 0 || k > len {
            bail!(InvalidArgument, "max_pool1d window {k} invalid for length {len}");
        }
        let lo = len / k;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(bsz * c * lo);
        let mut argmax = Vec::with_capacity(bsz * c * lo);
        for row in 0..bsz * c {
            for o in 0..lo {
                let base = row * len + o * k;
                let mut best = base;
                for i in base + 1..base + k {
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(vec![bsz, c, lo], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }))
    }

    /// Mean over the time axis: `[batch, c, len] -> [batch, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (bsz, c, len) = dims3(self.value(x).shape(), "global_avg_pool input")?;
        let out = self
            .value(x)
            .data()
            .chunks(len)
            .map(|r| r.iter().sum::<f64>() / len as f64)
            .collect();
        let value = Tensor::new(vec![bsz, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push(value, Op::Mean(x))
    }

    /// Sum over all but the leading axis: `[batch, ...] -> [batch]`.
    pub fn sum_per_item(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 1 || t.dim(0) == 0 {
            bail!(Shape, "sum_per_item needs a leading batch axis, got {:?}", t.shape());
        }
        let b = t.dim(0);
        let per = t.numel() / b;
        let out = t.data().chunks(per).map(|r| r.iter().sum()).collect();
        let value = Tensor::new(vec![b], out)?;
        Ok(self.push(value, Op::SumPerItem(x)))
    }

    /// Repeats a one-element tensor to `shape`.
    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.value(x).numel() != 1 {
            bail!(Shape, "broadcast source must have one element, got {:?}", self.value(x).shape());
        }
        let value = Tensor::full(shape, self.value(x).item());
        Ok(self.push(value, Op::Broadcast(x)))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0).sqrt());
        self.push(value, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square(x))
    }

    /// Row-wise softmax of `[batch, classes]`.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (b, c) = dims2(self.value(x).shape(), "softmax")?;
        let value = Tensor::new(vec![b, c], softmax_rows(self.value(x).data(), c))?;
        Ok(self.push(value, Op::Softmax(x)))
    }

    /// Mean negative log-likelihood of `labels` under softmax(`logits`).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = dims2(self.value(logits).shape(), "softmax_cross_entropy")?;
        if labels.len() != b {
            bail!(Shape, "{} labels for a batch of {b}", labels.len());
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            bail!(InvalidArgument, "label {bad} out of range for {c} classes");
        }
        let ld = self.value(logits).data();
        let mut loss = 0.0;
        for (row, &y) in ld.chunks(c).zip(labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let probs = Tensor::new(vec![b, c], softmax_rows(ld, c))?;
        let value = Tensor::scalar(loss / b as f64);
        Ok(self.push(value, Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    /// Mean of squared differences.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse_loss")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).powi(2)).sum();
        let value = Tensor::scalar(s / ta.numel() as f64);
        Ok(self.push(value, Op::MseLoss(a, b)))
    }

    /// Reverse sweep from a one-element `loss`. Parameter gradients are
    /// added to `store` (accumulating across calls); gradients of
    /// [`Graph::input_with_grad`] leaves are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            bail!(Shape, "backward needs a scalar loss, got shape {:?}", lv.shape());
        }
        let mut out = Gradients::default();
        if !self.nodes[loss.0].needs_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    out.grads.insert(i, g);
                }
                Op::Param(id) => store.accumulate_grad(*id, &g),
                _ => self.node_backward(i, &g, &mut grads)?,
            }
        }
        Ok(out)
    }

    fn node_backward(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let need = |v: &Var| self.nodes[v.0].needs_grad;
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv1d { x, w, b, stride, pad } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let (bsz, ci, len) = dims3(xt.shape(), "conv1d")?;
                let (co, _, k) = dims3(wt.shape(), "conv1d")?;
                let lo = g.dim(2);
                let win = Windows { channels: ci, length: len, kernel: k, stride: *stride, pad: *pad, positions: lo };
                let mut cols = vec![0.0; win.cols_len()];
                let mut dw = vec![0.0; wt.numel()];
                let mut dx = vec![0.0; xt.numel()];
                for bi in 0..bsz {
                    let gb = &gd[bi * co * lo..(bi + 1) * co * lo];
                    if need(w) {
                        im2col(&xt.data()[bi * ci * len..(bi + 1) * ci * len], &win, &mut cols);
                        gemm(co, lo, ci * k, gb, false, &cols, true, &mut dw, 1.0);
                    }
                    if need(x) {
                        gemm(ci * k, co, lo, wt.data(), true, gb, false, &mut cols, 0.0);
                        col2im(&cols, &win, &mut dx[bi * ci * len..(bi + 1) * ci * len]);
                    }
                }
                if need(w) {
                    accumulate(grads, *w, Tensor::new(wt.shape().to_vec(), dw)?);
                }
                if need(x) {
                    accumulate(grads, *x, Tensor::new(xt.shape().to_vec(), dx)?);
                }
                if let Some(b) = b.filter(|b| need(b)) {
                    accumulate(grads, b, channel_sums(gd, bsz, co, lo));
                }
            }
            Op::ConvT1d { x, w, b, stride, pad } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let (bsz, ci, len) = dims3(xt.shape(), "conv_transpose1d")?;
                let (_, co, k) = dims3(wt.shape(), "conv_transpose1d")?;
                let out_len = g.dim(2);
                let win = Windows { channels: co, length: out_len, kernel: k, stride: *stride, pad: *pad, positions: len };
                let mut gcols = vec![0.0; win.cols_len()];
                let mut dw = vec![0.0; wt.numel()];
                let mut dx = vec![0.0; xt.numel()];
                for bi in 0..bsz {
                    im2col(&gd[bi * co * out_len..(bi + 1) * co * out_len], &win, &mut gcols);
                    if need(x) {
                        gemm(ci, co * k, len, wt.data(), false, &gcols, false, &mut dx[bi * ci * len..(bi + 1) * ci * len], 0.0);
                    }
                    if need(w) {
                        gemm(ci, len, co * k, &xt.data()[bi * ci * len..(bi + 1) * ci * len], false, &gcols, true, &mut dw, 1.0);
                    }
                }
                if need(w) {
                    accumulate(grads, *w, Tensor::new(wt.shape().to_vec(), dw)?);
                }
                if need(x) {
                    accumulate(grads, *x, Tensor::new(xt.shape().to_vec(), dx)?);
                }
                if let Some(b) = b.filter(|b| need(b)) {
                    accumulate(grads, b, channel_sums(gd, bsz, co, out_len));
                }
            }
            Op::Linear { x, w, b } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let (bsz, inp) = dims2(xt.shape(), "linear")?;
                let o = wt.dim(0);
                if need(x) {
                    let mut dx = vec![0.0; bsz * inp];
                    gemm(bsz, o, inp, gd, false, wt.data(), false, &mut dx, 0.0);
                    accumulate(grads, *x, Tensor::new(vec![bsz, inp], dx)?);
                }
                if need(w) {
                    let mut dw = vec![0.0; o * inp];
                    gemm(o, bsz, inp, gd, true, xt.data(), false, &mut dw, 0.0);
                    accumulate(grads, *w, Tensor::new(vec![o, inp], dw)?);
                }
                if let Some(b) = b.filter(|b| need(b)) {
                    let mut db = vec![0.0; o];
                    for row in gd.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    accumulate(grads, b, Tensor::new(vec![o], db)?);
                }
            }
            Op::MatMul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, k) = dims2(at.shape(), "matmul")?;
                let n = bt.dim(1);
                if need(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, bt.data(), true, &mut da, 0.0);
                    accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if need(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, at.data(), true, gd, false, &mut db, 0.0);
                    accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = dims2(self.value(*a).shape(), "transpose")?;
                accumulate(grads, *a, Tensor::new(vec![m, n], transpose2(gd, n, m))?);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let (bsz, c, len) = dims3(xhat.shape(), "batchnorm1d")?;
                let hd = xhat.data();
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gh = vec![0.0; c];
                for bi in 0..bsz {
                    for ch in 0..c {
                        for i in (bi * c + ch) * len..(bi * c + ch + 1) * len {
                            sum_g[ch] += gd[i];
                            sum_gh[ch] += gd[i] * hd[i];
                        }
                    }
                }
                if need(x) {
                    let m = (bsz * len) as f64;
                    let mut dx = vec![0.0; hd.len()];
                    for bi in 0..bsz {
                        for ch in 0..c {
                            let s = gam[ch] * inv_std[ch];
                            for i in (bi * c + ch) * len..(bi * c + ch + 1) * len {
                                dx[i] = if *train {
                                    s * (gd[i] - sum_g[ch] / m - hd[i] * sum_gh[ch] / m)
                                } else {
                                    s * gd[i]
                                };
                            }
                        }
                    }
                    accumulate(grads, *x, Tensor::new(xhat.shape().to_vec(), dx)?);
                }
                if need(gamma) {
                    accumulate(grads, *gamma, Tensor::new(vec![c], sum_gh)?);
                }
                if need(beta) {
                    accumulate(grads, *beta, Tensor::new(vec![c], sum_g)?);
                }
            }
            Op::Relu(x) => {
                let dx = self.value(*x).zip_map(g, |v, g| if v > 0.0 { g } else { 0.0 })?;
                accumulate(grads, *x, dx);
            }
            Op::LeakyRelu(x, s) => {
                let dx = self.value(*x).zip_map(g, |v, g| if v > 0.0 { g } else { s * g })?;
                accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                if need(a) {
                    accumulate(grads, *a, g.clone());
                }
                if need(b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    accumulate(grads, *a, g.clone());
                }
                if need(b) {
                    accumulate(grads, *b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    accumulate(grads, *a, g.zip_map(self.value(*b), |g, v| g * v)?);
                }
                if need(b) {
                    accumulate(grads, *b, g.zip_map(self.value(*a), |g, v| g * v)?);
                }
            }
            Op::Scale(x, s) => accumulate(grads, *x, g.scale(*s)),
            Op::AddScalar(x) => accumulate(grads, *x, g.clone()),
            Op::MulConst(x, c) => accumulate(grads, *x, g.zip_map(c, |g, c| g * c)?),
            Op::AddChannel { x, e } => {
                if need(x) {
                    accumulate(grads, *x, g.clone());
                }
                if need(e) {
                    let len = g.dim(2);
                    let de = gd.chunks(len).map(|r| r.iter().sum()).collect();
                    accumulate(grads, *e, Tensor::new(self.shape(*e), de)?);
                }
            }
            Op::Concat(parts) => {
                let (bsz, total, len) = dims3(g.shape(), "concat")?;
                let mut off = 0;
                for p in parts {
                    let c = self.value(*p).dim(1);
                    if need(p) {
                        let mut d = Vec::with_capacity(bsz * c * len);
                        for bi in 0..bsz {
                            d.extend_from_slice(&gd[(bi * total + off) * len..(bi * total + off + c) * len]);
                        }
                        accumulate(grads, *p, Tensor::new(vec![bsz, c, len], d)?);
                    }
                    off += c;
                }
            }
            Op::SliceChannels { x, start } => {
                let (bsz, c, len) = dims3(self.value(*x).shape(), "slice_channels")?;
                let n = g.dim(1);
                let mut dx = vec![0.0; bsz * c * len];
                for bi in 0..bsz {
                    dx[(bi * c + start) * len..(bi * c + start + n) * len]
                        .copy_from_slice(&gd[bi * n * len..(bi + 1) * n * len]);
                }
                accumulate(grads, *x, Tensor::new(vec![bsz, c, len], dx)?);
            }
            Op::Reshape(x) => accumulate(grads, *x, g.clone().reshape(&self.shape(*x))?),
            Op::MaxPool { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let d = dx.data_mut();
                for (&j, &gv) in argmax.iter().zip(gd) {
                    d[j] += gv;
                }
                accumulate(grads, *x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let shape = self.shape(*x);
                let len = shape[2];
                let dx = Tensor::from_fn(&shape, |i| gd[i / len] / len as f64);
                accumulate(grads, *x, dx);
            }
            Op::Sum(x) => accumulate(grads, *x, Tensor::full(&self.shape(*x), g.item())),
            Op::Mean(x) => {
                let shape = self.shape(*x);
                let n: usize = shape.iter().product();
                accumulate(grads, *x, Tensor::full(&shape, g.item() / n as f64));
            }
            Op::SumPerItem(x) => {
                let shape = self.shape(*x);
                let per = shape[1..].iter().product::<usize>();
                accumulate(grads, *x, Tensor::from_fn(&shape, |i| gd[i / per]));
            }
            Op::Broadcast(x) => accumulate(grads, *x, Tensor::full(&self.shape(*x), g.sum())),
            Op::Sqrt(x) => {
                let y = self.value(Var(i));
                let dx = y.zip_map(g, |y, g| if y > 0.0 { g / (2.0 * y) } else { 0.0 })?;
                accumulate(grads, *x, dx);
            }
            Op::Square(x) => accumulate(grads, *x, self.value(*x).zip_map(g, |v, g| 2.0 * v * g)?),
            Op::Softmax(x) => {
                let y = self.value(Var(i));
                let c = y.dim(1);
                let mut dx = vec![0.0; y.numel()];
                for ((yr, gr), dr) in y.data().chunks(c).zip(gd.chunks(c)).zip(dx.chunks_mut(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let (b, c) = dims2(probs.shape(), "softmax_cross_entropy")?;
                let s = g.item() / b as f64;
                let mut d = probs.data().to_vec();
                for (row, &y) in d.chunks_mut(c).zip(labels) {
                    row[y] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= s);
                }
                accumulate(grads, *logits, Tensor::new(vec![b, c], d)?);
            }
            Op::MseLoss(a, b) => {
                let n = self.value(*a).numel() as f64;
                let s = 2.0 * g.item() / n;
                let diff = self.value(*a).zip_map(self.value(*b), |x, y| s * (x - y))?;
                if need(b) {
                    accumulate(grads, *b, diff.scale(-1.0));
                }
                if need(a) {
                    accumulate(grads, *a, diff);
                }
            }
        }
        Ok(())
    }

    /// Gradient of `sum(output)` with respect to each of `wrt`, built from
    /// differentiable graph ops. The returned nodes can be fed into further
    /// computation and differentiated again with [`Graph::backward`].
    ///
    /// Supports the ops of feed-forward convolutional/linear networks with
    /// piecewise-linear activations; others are rejected by name.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let n = output.0 + 1;
        let mut depends = vec![false; n];
        for v in wrt {
            if v.0 < n {
                depends[v.0] = true;
            }
        }
        for i in 0..n {
            if !depends[i] {
                depends[i] = self.nodes[i].op.inputs().iter().any(|v| depends[v.0]);
            }
        }
        let mut grads: Vec<Option<Var>> = vec![None; n];
        if depends[output.0] {
            let seed = Tensor::ones(self.value(output).shape());
            grads[output.0] = Some(self.input(seed));
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op.clone();
            for (input, vjp) in self.symbolic_vjp(&op, g, &depends)? {
                grads[input.0] = Some(match grads[input.0] {
                    Some(prev) => self.add(prev, vjp)?,
                    None => vjp,
                });
            }
        }
        wrt.iter()
            .map(|v| match grads.get(v.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let zero = Tensor::zeros(self.value(*v).shape());
                    Ok(self.input(zero))
                }
            })
            .collect()
    }

    fn symbolic_vjp(&mut self, op: &Op, g: Var, depends: &[bool]) -> Result<Vec<(Var, Var)>> {
        let dep = |v: &Var| depends[v.0];
        let mut out = Vec::new();
        let unsupported = |what: &str| -> Result<Vec<(Var, Var)>> {
            bail!(InvalidArgument, "no symbolic gradient through {} ({what})", op.name())
        };
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv1d { x, w, b, stride, pad } => {
                if dep(w) || b.as_ref().is_some_and(dep) {
                    return unsupported("weights");
                }
                if dep(x) {
                    let len = self.value(*x).dim(2);
                    out.push((*x, self.conv_transpose1d_to_len(g, *w, None, *stride, *pad, len)?));
                }
            }
            Op::ConvT1d { x, w, b, stride, pad } => {
                if dep(w) || b.as_ref().is_some_and(dep) {
                    return unsupported("weights");
                }
                if dep(x) {
                    out.push((*x, self.conv1d(g, *w, None, *stride, *pad)?));
                }
            }
            Op::Linear { x, w, b } => {
                if dep(w) || b.as_ref().is_some_and(dep) {
                    return unsupported("weights");
                }
                if dep(x) {
                    out.push((*x, self.matmul(g, *w)?));
                }
            }
            Op::MatMul(a, b) => {
                if dep(a) {
                    let bt = self.transpose(*b)?;
                    out.push((*a, self.matmul(g, bt)?));
                }
                if dep(b) {
                    let at = self.transpose(*a)?;
                    out.push((*b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => out.push((*a, self.transpose(g)?)),
            Op::Relu(x) => {
                let mask = self.value(*x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                out.push((*x, self.mul_const(g, mask)?));
            }
            Op::LeakyRelu(x, s) => {
                let mask = self.value(*x).map(|v| if v > 0.0 { 1.0 } else { *s });
                out.push((*x, self.mul_const(g, mask)?));
            }
            Op::Add(a, b) => {
                if dep(a) {
                    out.push((*a, g));
                }
                if dep(b) {
                    out.push((*b, g));
                }
            }
            Op::Sub(a, b) => {
                if dep(a) {
                    out.push((*a, g));
                }
                if dep(b) {
                    out.push((*b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if dep(a) {
                    out.push((*a, self.mul(g, *b)?));
                }
                if dep(b) {
                    out.push((*b, self.mul(g, *a)?));
                }
            }
            Op::Scale(x, s) => out.push((*x, self.scale(g, *s))),
            Op::AddScalar(x) => out.push((*x, g)),
            Op::MulConst(x, c) => out.push((*x, self.mul_const(g, c.clone())?)),
            Op::AddChannel { x, e } => {
                if dep(e) {
                    return unsupported("channel offset");
                }
                out.push((*x, g));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let c = self.value(*p).dim(1);
                    if dep(p) {
                        out.push((*p, self.slice_channels(g, off, c)?));
                    }
                    off += c;
                }
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x);
                out.push((*x, self.reshape(g, &shape)?));
            }
            Op::Sum(x) => {
                let shape = self.shape(*x);
                out.push((*x, self.broadcast(g, &shape)?));
            }
            Op::Mean(x) => {
                let shape = self.shape(*x);
                let n: usize = shape.iter().product();
                let b = self.broadcast(g, &shape)?;
                out.push((*x, self.scale(b, 1.0 / n as f64)));
            }
            Op::Broadcast(x) => out.push((*x, self.sum(g))),
            Op::Square(x) => {
                let two_x = self.scale(*x, 2.0);
                out.push((*x, self.mul(g, two_x)?));
            }
            _ => return unsupported("op"),
        }
        Ok(out)
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], bsz: usize, c: usize, len: usize) {
    for bi in 0..bsz {
        for (ch, &bv) in bias.iter().enumerate().take(c) {
            out[(bi * c + ch) * len..(bi * c + ch + 1) * len]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
}

fn channel_sums(g: &[f64], bsz: usize, c: usize, len: usize) -> Tensor {
    let mut s = vec![0.0; c];
    for bi in 0..bsz {
        for (ch, sv) in s.iter_mut().enumerate() {
            *sv += g[(bi * c + ch) * len..(bi * c + ch + 1) * len].iter().sum::<f64>();
        }
    }
    Tensor::from_fn(&[c], |i| s[i])
}

fn transpose2(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub(crate) fn softmax_rows(x: &[f64], c: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}
