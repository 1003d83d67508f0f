mod activation;
mod conv;
mod linalg;
mod norm;
mod pool;
mod shape;

pub use activation::Activation;
pub use conv::Conv2dSpec;
pub use norm::{NormMode, DEFAULT_NORM_EPS};
pub use pool::PoolKind;

use crate::graph::{GradAcc, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: T },
    AddRowBias { x: Var, bias: Var },
    AddChannelBias { x: Var, bias: Var, channels: usize, inner: usize },
    Conv2d { input: Var, kernel: Var, geom: conv::ConvGeom },
    Activation { x: Var, kind: Activation },
    Norm { x: Var, gamma: Var, beta: Var, cache: norm::NormCache<T> },
    Pool { x: Var, kind: PoolKind, geom: pool::PoolGeom, argmax: Vec<usize> },
    Concat { parts: Vec<Var>, outer: usize, inner: usize, sizes: Vec<usize> },
    Reshape { x: Var },
    Narrow { x: Var, outer: usize, dim: usize, inner: usize, start: usize, len: usize },
    Mse { pred: Var, target: Var },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b } | Op::Add { a, b } => vec![*a, *b],
            Op::Scale { x, .. }
            | Op::Activation { x, .. }
            | Op::Pool { x, .. }
            | Op::Reshape { x }
            | Op::Narrow { x, .. } => vec![*x],
            Op::AddRowBias { x, bias } | Op::AddChannelBias { x, bias, .. } => vec![*x, *bias],
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::Norm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Mse { pred, target } => vec![*pred, *target],
        }
    }

    pub(crate) fn backward(&self, out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<'_, T>) {
        match self {
            Op::Leaf => {}
            Op::MatMul { a, b } => linalg::matmul_backward(*a, *b, grad, acc),
            Op::Add { a, b } => {
                acc.add_slice(*a, grad);
                acc.add_slice(*b, grad);
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                acc.add_owned(*x, grad.iter().map(|&g| g * f).collect());
            }
            Op::AddRowBias { x, bias } => linalg::add_row_bias_backward(*x, *bias, grad, acc),
            Op::AddChannelBias {
                x,
                bias,
                channels,
                inner,
            } => linalg::add_channel_bias_backward(*x, *bias, *channels, *inner, grad, acc),
            Op::Conv2d {
                input,
                kernel,
                geom,
            } => conv::backward(*input, *kernel, geom, grad, acc),
            Op::Activation { x, kind } => activation::backward(*x, *kind, out, grad, acc),
            Op::Norm {
                x,
                gamma,
                beta,
                cache,
            } => norm::backward(*x, *gamma, *beta, cache, grad, acc),
            Op::Pool {
                x,
                kind,
                geom,
                argmax,
            } => pool::backward(*x, *kind, geom, argmax, grad, acc),
            Op::Concat {
                parts,
                outer,
                inner,
                sizes,
            } => shape::concat_backward(parts, *outer, *inner, sizes, grad, acc),
            Op::Reshape { x } => acc.add_slice(*x, grad),
            Op::Narrow {
                x,
                outer,
                dim,
                inner,
                start,
                len,
            } => shape::narrow_backward(*x, *outer, *dim, *inner, *start, *len, grad, acc),
            Op::Mse { pred, target } => linalg::mse_backward(*pred, *target, grad, acc),
        }
    }
}
