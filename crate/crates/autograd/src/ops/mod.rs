//! Differentiable operations. Each submodule adds forward methods on
//! [`Graph`] and the matching backward rule.

mod attention;
mod conv;
mod elementwise;
mod loss;
mod norm;
mod pool;
mod shape;
mod softmax;

pub use conv::Conv2dOpts;
pub use norm::{BatchStats, BnMode, RunningStats};
pub use pool::{PoolMode, PoolScope};

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Relu(Var),
    Sigmoid(Var),
    ScaleBy { s: Var, x: Var },
    BroadcastMul { x: Var, s: Var },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    Concat(Vec<Var>),
    Index0 { x: Var, index: usize },
    MatMul(Var, Var),
    Softmax { x: Var, axis: usize },
    Conv(conv::ConvCtx),
    GlobalAvg(Var),
    GlobalMax { x: Var, argmax: Vec<usize> },
    WindowPool(pool::WindowCtx),
    Upsample { x: Var },
    BatchNorm(norm::BnCtx),
    BceWithLogits { logits: Var, targets: Vec<f64> },
    Attention(Box<attention::AttentionCtx>),
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Affine { x, .. }
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::Transpose(x)
            | Op::Softmax { x, .. }
            | Op::GlobalAvg(x)
            | Op::GlobalMax { x, .. }
            | Op::Upsample { x }
            | Op::Index0 { x, .. } => vec![*x],
            Op::ScaleBy { s, x } | Op::BroadcastMul { x, s } => vec![*x, *s],
            Op::Concat(parts) => parts.clone(),
            Op::Conv(ctx) => ctx.inputs(),
            Op::WindowPool(ctx) => vec![ctx.x],
            Op::BatchNorm(ctx) => vec![ctx.x, ctx.gamma, ctx.beta],
            Op::BceWithLogits { logits, .. } => vec![*logits],
            Op::Attention(ctx) => vec![ctx.q, ctx.k, ctx.v],
        }
    }
}

impl Graph {
    pub(crate) fn backward_node(&self, idx: usize, g: &Tensor, pending: &mut [Option<Tensor>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(pending, *a, g.clone());
                self.accumulate(pending, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(pending, *a, g.clone());
                self.accumulate(pending, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => elementwise::mul_backward(self, *a, *b, g, pending),
            Op::Affine { x, scale } => {
                let s = *scale;
                self.accumulate(pending, *x, g.map(|v| v * s));
            }
            Op::Relu(x) => elementwise::relu_backward(self, *x, g, pending),
            Op::Sigmoid(x) => elementwise::sigmoid_backward(self, *x, out, g, pending),
            Op::ScaleBy { s, x } => elementwise::scale_by_backward(self, *s, *x, g, pending),
            Op::BroadcastMul { x, s } => elementwise::broadcast_mul_backward(self, *x, *s, g, pending),
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(pending, *x, Tensor::full(self.shape(*x), gv));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let gv = g.item() / n;
                self.accumulate(pending, *x, Tensor::full(self.shape(*x), gv));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                let delta = g.clone().reshaped(&shape).expect("reshape backward");
                self.accumulate(pending, *x, delta);
            }
            Op::Transpose(x) => {
                self.accumulate(pending, *x, shape::transpose2(g));
            }
            Op::Concat(parts) => shape::concat_backward(self, parts, g, pending),
            Op::Index0 { x, index } => shape::index0_backward(self, *x, *index, g, pending),
            Op::MatMul(a, b) => shape::matmul_backward(self, *a, *b, g, pending),
            Op::Softmax { x, axis } => softmax::softmax_backward(self, *x, *axis, out, g, pending),
            Op::Conv(ctx) => conv::conv_backward(self, ctx, g, pending),
            Op::GlobalAvg(x) => pool::global_avg_backward(self, *x, g, pending),
            Op::GlobalMax { x, argmax } => pool::global_max_backward(self, *x, argmax, g, pending),
            Op::WindowPool(ctx) => pool::window_backward(self, ctx, g, pending),
            Op::Upsample { x } => pool::upsample_backward(self, *x, g, pending),
            Op::BatchNorm(ctx) => norm::batchnorm_backward(self, ctx, g, pending),
            Op::BceWithLogits { logits, targets } => loss::bce_backward(self, *logits, targets, g, pending),
            Op::Attention(ctx) => attention::attention_backward(self, ctx, g, pending),
        }
    }
}
