use super::Op;
use crate::error::{Error, Result};
use crate::graph::{GradAcc, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// Matrix product of `a: [M, K]` and `b: [K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shapes("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            false,
            false,
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            self.value(b).data(),
            T::zero(),
            &mut out,
        );
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b }))
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shapes("add", sa, sb));
        }
        let shape = sa.to_vec();
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add { a, b }))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x);
        let out = value.data().iter().map(|&v| v * factor).collect();
        let shape = value.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Scale { x, factor })
    }

    /// Adds `bias: [F]` to every row of `x: [.., F]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.is_empty() || sb.len() != 1 || sx[sx.len() - 1] != sb[0] {
            return Err(Error::shapes("add_row_bias", sx, sb));
        }
        let shape = sx.to_vec();
        let b = self.value(bias).data();
        let f = b.len();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(f) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o = *o + bv;
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddRowBias { x, bias }))
    }

    /// Adds `bias: [C]` along the channel axis of `x: [C, ..]` or `x: [N, C, ..]`
    /// (rank 4 is taken as batched, rank 3 or below as a single sample).
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let axis = if sx.len() == 4 { 1 } else { 0 };
        if sx.len() <= axis || sb.len() != 1 || sx[axis] != sb[0] {
            return Err(Error::shapes("add_channel_bias", sx, sb));
        }
        let channels = sb[0];
        let inner: usize = sx[axis + 1..].iter().product();
        let shape = sx.to_vec();
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for sample in out.chunks_exact_mut(channels * inner) {
            for (plane, &bv) in sample.chunks_exact_mut(inner).zip(b) {
                plane.iter_mut().for_each(|o| *o = *o + bv);
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::AddChannelBias {
                x,
                bias,
                channels,
                inner,
            },
        ))
    }

    /// Mean of squared elementwise differences, as a scalar tensor.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(Error::shapes("mse_loss", sp, st));
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let sum = p
            .iter()
            .zip(t)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        let mean = sum / T::from_f64(p.len() as f64);
        Ok(self.push(Tensor::scalar(mean), Op::Mse { pred, target }))
    }
}

pub(super) fn matmul_backward<T: Scalar>(a: Var, b: Var, grad: &[T], acc: &mut GradAcc<'_, T>) {
    let va = acc.value(a).clone();
    let vb = acc.value(b).clone();
    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
    if let Some(ga) = acc.slot(a) {
        // dA += G · Bᵀ
        T::gemm(false, true, m, n, k, T::one(), grad, vb.data(), T::one(), ga);
    }
    if let Some(gb) = acc.slot(b) {
        // dB += Aᵀ · G
        if m <= SMALL_RANK {
            // A few rank-1 updates; the packed kernel is slow for a tiny
            // inner dimension.
            let ad = va.data();
            for (i, row) in gb.chunks_exact_mut(n).enumerate() {
                for r in 0..m {
                    let s = ad[r * k + i];
                    for (o, &g) in row.iter_mut().zip(&grad[r * n..(r + 1) * n]) {
                        *o = *o + s * g;
                    }
                }
            }
        } else {
            T::gemm(true, false, k, m, n, T::one(), va.data(), grad, T::one(), gb);
        }
    }
}

const SMALL_RANK: usize = 4;

pub(super) fn add_row_bias_backward<T: Scalar>(x: Var, bias: Var, grad: &[T], acc: &mut GradAcc<'_, T>) {
    acc.add_slice(x, grad);
    if let Some(gb) = acc.slot(bias) {
        let f = gb.len();
        for row in grad.chunks_exact(f) {
            for (o, &g) in gb.iter_mut().zip(row) {
                *o = *o + g;
            }
        }
    }
}

pub(super) fn add_channel_bias_backward<T: Scalar>(
    x: Var,
    bias: Var,
    channels: usize,
    inner: usize,
    grad: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    acc.add_slice(x, grad);
    if let Some(gb) = acc.slot(bias) {
        for sample in grad.chunks_exact(channels * inner) {
            for (o, plane) in gb.iter_mut().zip(sample.chunks_exact(inner)) {
                *o = *o + plane.iter().fold(T::zero(), |s, &g| s + g);
            }
        }
    }
}

pub(super) fn mse_backward<T: Scalar>(pred: Var, target: Var, grad: &[T], acc: &mut GradAcc<'_, T>) {
    let p = acc.value(pred).clone();
    let t = acc.value(target).clone();
    let coef = grad[0] * T::from_f64(2.0 / p.numel() as f64);
    let d: Vec<T> = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(&a, &b)| coef * (a - b))
        .collect();
    if acc.wants(target) {
        acc.add_owned(target, d.iter().map(|&v| -v).collect());
    }
    acc.add_owned(pred, d);
}
