//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value. [`Tape::backward`] walks the nodes in reverse order and
//! returns the gradient of a scalar loss with respect to every leaf created
//! with `requires_grad`.
//!
//! Policy: a tape is single-use. After `backward` the recorded values stay
//! readable, but a second `backward` fails with
//! [`TensorError::TapeConsumed`]; build a new tape for the next step.

use crate::error::{Result, TensorError};
use crate::ops::activation::{activation_backward, activation_forward, Activation};
use crate::ops::conv::{
    conv_forward_raw, conv_input_grad_raw, conv_kernel_grad_raw, ConvGeometry, Padding,
};
use crate::ops::dense::{dense_backward, dense_forward};
use crate::ops::loss::check_labels;
use crate::ops::norm::{batchnorm_backward, batchnorm_forward, BnSaved, RunningStats};
use crate::ops::pool::PoolGeometry;
use crate::ops::{self, check_rate, dropout_mask, inverse_permutation, unslice, Mode};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
    },
    ConvTransposed {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved,
    },
    Activation {
        kind: Activation,
        input: Var,
    },
    AvgPool {
        input: Var,
        geom: PoolGeometry,
    },
    Mask {
        input: Var,
        mask: Vec<f32>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    CrossEntropy {
        input: Var,
        labels: Vec<usize>,
    },
    Mse {
        prediction: Var,
        target: Var,
    },
    Reshape {
        input: Var,
    },
    Permute {
        input: Var,
        axes: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    Mean(Var),
    StraightThrough(Var),
    ChannelMix {
        input: Var,
        weights: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf [`Var`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(TensorError::NonFinite(op))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        let value = finite(name, value)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: (usize, usize), padding: Padding) -> Result<Var> {
        let geom = ConvGeometry::for_conv(self.shape(input), self.shape(kernel), stride, padding)?;
        let out = conv_forward_raw(&geom, self.value(input).data(), self.value(kernel).data());
        let value = Tensor::from_parts(geom.output_shape().to_vec(), out);
        self.push("conv2d", value, Op::Conv { input, kernel, geom }, &[input, kernel])
    }

    pub fn conv2d_transposed(
        &mut self,
        input: Var,
        kernel: Var,
        stride: (usize, usize),
        padding: Padding,
        output_hw: (usize, usize),
    ) -> Result<Var> {
        let geom = ConvGeometry::for_transposed(
            self.shape(input),
            self.shape(kernel),
            stride,
            padding,
            output_hw,
        )?;
        let out = conv_input_grad_raw(&geom, self.value(input).data(), self.value(kernel).data());
        let value = Tensor::from_parts(geom.input_shape().to_vec(), out);
        self.push(
            "conv2d_transposed",
            value,
            Op::ConvTransposed { input, kernel, geom },
            &[input, kernel],
        )
    }

    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        running: &mut RunningStats,
    ) -> Result<Var> {
        let (value, saved) = batchnorm_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            mode,
            running,
        )?;
        self.push(
            "batchnorm",
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
            },
            &[input, gamma, beta],
        )
    }

    pub fn activation(&mut self, kind: Activation, input: Var) -> Result<Var> {
        let value = activation_forward(kind, self.value(input));
        self.push("activation", value, Op::Activation { kind, input }, &[input])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(Activation::Relu, input)
    }

    pub fn log_softmax(&mut self, input: Var) -> Result<Var> {
        self.activation(Activation::LogSoftmax, input)
    }

    pub fn avgpool2d(
        &mut self,
        input: Var,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad_to_table: bool,
    ) -> Result<Var> {
        let geom = PoolGeometry::resolve(self.shape(input), kernel, stride, pad_to_table)?;
        let x = self.value(input);
        let out = geom.forward(x.dim(0) * x.dim(1), x.data());
        let shape = vec![x.dim(0), x.dim(1), geom.output.0, geom.output.1];
        self.push("avgpool2d", Tensor::from_parts(shape, out), Op::AvgPool { input, geom }, &[input])
    }

    pub fn dropout(&mut self, input: Var, rate: f32, mode: Mode, rng: &mut RngState) -> Result<Var> {
        check_rate(rate)?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let x = self.value(input);
        let mask = dropout_mask(x.len(), rate, rng);
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        self.push("dropout", value, Op::Mask { input, mask }, &[input])
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let value = dense_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        )?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        self.push("dense", value, Op::Dense { input, weight, bias }, &parents)
    }

    /// Mean negative log-likelihood; `input` holds log-probabilities `[B, K]`.
    pub fn cross_entropy(&mut self, input: Var, labels: &[usize]) -> Result<Var> {
        let value = Tensor::scalar(ops::loss::cross_entropy(self.value(input), labels)?);
        check_labels(self.value(input), labels)?;
        self.push(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                input,
                labels: labels.to_vec(),
            },
            &[input],
        )
    }

    pub fn mse(&mut self, prediction: Var, target: Var) -> Result<Var> {
        let value = Tensor::scalar(ops::loss::mse(self.value(prediction), self.value(target))?);
        self.push("mse", value, Op::Mse { prediction, target }, &[prediction, target])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        self.push("reshape", value, Op::Reshape { input }, &[input])
    }

    pub fn permute(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        let value = ops::permute(self.value(input), axes)?;
        self.push(
            "permute",
            value,
            Op::Permute {
                input,
                axes: axes.to_vec(),
            },
            &[input],
        )
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let value = ops::concat(&parts, axis)?;
        self.push(
            "concat",
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = ops::slice(self.value(input), axis, start, len)?;
        self.push("slice", value, Op::Slice { input, axis, start }, &[input])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), out);
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), out);
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Result<Var> {
        let out = self.value(a).data().iter().map(|x| x * factor).collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), out);
        self.push("scale", value, Op::Scale(a, factor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum() as f32);
        self.push("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::scalar((t.sum() / t.len() as f64) as f32);
        self.push("mean", value, Op::Mean(a), &[a])
    }

    /// Row-wise one-hot of the argmax of a 2-D tensor in the forward pass,
    /// identity in the backward pass.
    pub fn straight_through_onehot(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let hot = t.argmax_rows()?;
        let k = t.dim(1);
        let mut out = vec![0f32; t.len()];
        for (r, &c) in hot.iter().enumerate() {
            out[r * k + c] = 1.0;
        }
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        self.push("straight_through", value, Op::StraightThrough(input), &[input])
    }

    /// Mixes the channel axis: `input` `[B, K, H, W]` and `weights` `[M, K]`
    /// give `[B, M, H, W]` with `out[b, m] = Σ_k weights[m, k] · input[b, k]`.
    pub fn channel_mix(&mut self, input: Var, weights: Var) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weights));
        if x.ndim() != 4 || w.ndim() != 2 || w.dim(1) != x.dim(1) {
            return Err(TensorError::ShapeMismatch {
                op: "channel_mix",
                detail: format!("input {:?} with weights {:?}", x.shape(), w.shape()),
            });
        }
        let (b, k, m) = (x.dim(0), x.dim(1), w.dim(0));
        let plane = x.dim(2) * x.dim(3);
        let mut out = vec![0f32; b * m * plane];
        for bi in 0..b {
            for mi in 0..m {
                let o = &mut out[(bi * m + mi) * plane..][..plane];
                for ki in 0..k {
                    let wv = w.data()[mi * k + ki];
                    if wv == 0.0 {
                        continue;
                    }
                    for (ov, &xv) in o.iter_mut().zip(&x.data()[(bi * k + ki) * plane..][..plane]) {
                        *ov += wv * xv;
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![b, m, x.dim(2), x.dim(3)], out);
        self.push("channel_mix", value, Op::ChannelMix { input, weights }, &[input, weights])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let loss_shape = self.shape(loss).to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::from_parts(loss_shape, vec![1.0]));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let gyd = gy.data();
            let nodes = &self.nodes;
            let mut contributions: Vec<(Var, Vec<f32>)> = Vec::new();
            let wants = |v: Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv { input, kernel, geom } => {
                    if wants(*input) {
                        contributions.push((*input, conv_input_grad_raw(geom, gyd, self.value(*kernel).data())));
                    }
                    if wants(*kernel) {
                        contributions.push((*kernel, conv_kernel_grad_raw(geom, self.value(*input).data(), gyd)));
                    }
                }
                Op::ConvTransposed { input, kernel, geom } => {
                    if wants(*input) {
                        contributions.push((*input, conv_forward_raw(geom, gyd, self.value(*kernel).data())));
                    }
                    if wants(*kernel) {
                        contributions.push((*kernel, conv_kernel_grad_raw(geom, gyd, self.value(*input).data())));
                    }
                }
                Op::BatchNorm { input, gamma, beta, saved } => {
                    let (gx, gg, gb) = batchnorm_backward(self.shape(*input), self.value(*gamma), saved, gyd);
                    if wants(*input) {
                        contributions.push((*input, gx));
                    }
                    if wants(*gamma) {
                        contributions.push((*gamma, gg));
                    }
                    if wants(*beta) {
                        contributions.push((*beta, gb));
                    }
                }
                Op::Activation { kind, input } => {
                    contributions.push((*input, activation_backward(*kind, self.value(*input), &node.value, gyd)));
                }
                Op::AvgPool { input, geom } => {
                    let x = self.value(*input);
                    contributions.push((*input, geom.backward(x.dim(0) * x.dim(1), gyd)));
                }
                Op::Mask { input, mask } => {
                    contributions.push((*input, gyd.iter().zip(mask).map(|(g, m)| g * m).collect()));
                }
                Op::Dense { input, weight, bias } => {
                    let (gx, gw, gb) = dense_backward(self.value(*input), self.value(*weight), gyd);
                    if wants(*input) {
                        contributions.push((*input, gx));
                    }
                    if wants(*weight) {
                        contributions.push((*weight, gw));
                    }
                    if let Some(b) = bias {
                        if wants(*b) {
                            contributions.push((*b, gb));
                        }
                    }
                }
                Op::CrossEntropy { input, labels } => {
                    let x = self.value(*input);
                    let k = x.dim(1);
                    let scale = -gyd[0] / labels.len() as f32;
                    let mut g = vec![0f32; x.len()];
                    for (b, &l) in labels.iter().enumerate() {
                        g[b * k + l] = scale;
                    }
                    contributions.push((*input, g));
                }
                Op::Mse { prediction, target } => {
                    let (p, t) = (self.value(*prediction), self.value(*target));
                    let scale = 2.0 * gyd[0] / p.len() as f32;
                    let diff: Vec<f32> = p.data().iter().zip(t.data()).map(|(a, b)| scale * (a - b)).collect();
                    if wants(*target) {
                        contributions.push((*target, diff.iter().map(|v| -v).collect()));
                    }
                    if wants(*prediction) {
                        contributions.push((*prediction, diff));
                    }
                }
                Op::Reshape { input } => contributions.push((*input, gyd.to_vec())),
                Op::Permute { input, axes } => {
                    let back = ops::permute(&gy, &inverse_permutation(axes))?;
                    contributions.push((*input, back.into_data()));
                }
                Op::Concat { inputs, axis } => {
                    let mut start = 0;
                    for &v in inputs {
                        let len = self.shape(v)[*axis];
                        if wants(v) {
                            contributions.push((v, ops::slice(&gy, *axis, start, len)?.into_data()));
                        }
                        start += len;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let len = node.value.dim(*axis);
                    contributions.push((*input, unslice(gyd, self.shape(*input), *axis, *start, len)));
                }
                Op::Add(a, b) => {
                    contributions.push((*a, gyd.to_vec()));
                    contributions.push((*b, gyd.to_vec()));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    contributions.push((*a, gyd.iter().zip(bv).map(|(g, y)| g * y).collect()));
                    contributions.push((*b, gyd.iter().zip(av).map(|(g, x)| g * x).collect()));
                }
                Op::Scale(a, f) => contributions.push((*a, gyd.iter().map(|g| g * f).collect())),
                Op::Sum(a) => contributions.push((*a, vec![gyd[0]; self.value(*a).len()])),
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    contributions.push((*a, vec![gyd[0] / n as f32; n]));
                }
                Op::StraightThrough(a) => contributions.push((*a, gyd.to_vec())),
                Op::ChannelMix { input, weights } => {
                    let (x, w) = (self.value(*input), self.value(*weights));
                    let (b, k, m) = (x.dim(0), x.dim(1), w.dim(0));
                    let plane = x.dim(2) * x.dim(3);
                    if wants(*input) {
                        let mut gx = vec![0f32; x.len()];
                        for bi in 0..b {
                            for mi in 0..m {
                                let g = &gyd[(bi * m + mi) * plane..][..plane];
                                for ki in 0..k {
                                    let wv = w.data()[mi * k + ki];
                                    for (xv, &gv) in gx[(bi * k + ki) * plane..][..plane].iter_mut().zip(g) {
                                        *xv += wv * gv;
                                    }
                                }
                            }
                        }
                        contributions.push((*input, gx));
                    }
                    if wants(*weights) {
                        let mut gw = vec![0f64; w.len()];
                        for bi in 0..b {
                            for mi in 0..m {
                                let g = &gyd[(bi * m + mi) * plane..][..plane];
                                for ki in 0..k {
                                    let xs = &x.data()[(bi * k + ki) * plane..][..plane];
                                    gw[mi * k + ki] += g.iter().zip(xs).map(|(&a, &c)| a as f64 * c as f64).sum::<f64>();
                                }
                            }
                        }
                        contributions.push((*weights, gw.into_iter().map(|v| v as f32).collect()));
                    }
                }
            }
            for (v, g) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                if !crate::tensor::all_finite(&g) {
                    return Err(TensorError::NonFinite("backward"));
                }
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    slot @ None => {
                        *slot = Some(Tensor::from_parts(self.shape(v).to_vec(), g));
                    }
                }
            }
        }
        // keep only leaf gradients
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}
