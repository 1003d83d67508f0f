use super::Op;
use crate::error::{Error, Result};
use crate::graph::{GradAcc, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// Which elements share normalization statistics.
///
/// The input is viewed as `[outer, C, inner]` with one `gamma`/`beta` entry
/// per channel `C`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormMode {
    /// One mean/variance per channel, over every outer and inner position.
    Batch,
    /// One mean/variance per (outer, channel) pair, over the inner positions.
    Instance,
}

pub(crate) struct NormCache<T> {
    outer: usize,
    channels: usize,
    inner: usize,
    mode: NormMode,
    x_hat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T> NormCache<T> {
    fn group(&self, o: usize, c: usize) -> usize {
        match self.mode {
            NormMode::Batch => c,
            NormMode::Instance => o * self.channels + c,
        }
    }

    fn group_size(&self) -> usize {
        match self.mode {
            NormMode::Batch => self.outer * self.inner,
            NormMode::Instance => self.inner,
        }
    }

    fn groups(&self) -> usize {
        match self.mode {
            NormMode::Batch => self.channels,
            NormMode::Instance => self.outer * self.channels,
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// Standardizes `x: [B, F]` per feature over the batch axis using the
    /// current batch statistics, then applies `gamma * x_hat + beta`.
    pub fn batch_normalize(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 2 {
            return Err(Error::dim("batch_normalize", format!("expected [B, F], got {shape:?}")));
        }
        let (b, f) = (shape[0], shape[1]);
        self.normalize(x, gamma, beta, eps, NormMode::Batch, (b, f, 1), "batch_normalize")
    }

    /// Per-sample, per-channel standardization of `x: [N, C, H, W]` (or
    /// `[C, H, W]`) over the spatial axes.
    pub fn instance_normalize(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x);
        let view = match *shape {
            [n, c, h, w] => (n, c, h * w),
            [c, h, w] => (1, c, h * w),
            _ => {
                return Err(Error::dim(
                    "instance_normalize",
                    format!("expected [N, C, H, W] or [C, H, W], got {shape:?}"),
                ))
            }
        };
        self.normalize(x, gamma, beta, eps, NormMode::Instance, view, "instance_normalize")
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        mode: NormMode,
        (outer, channels, inner): (usize, usize, usize),
        op: &'static str,
    ) -> Result<Var> {
        for p in [gamma, beta] {
            if self.shape(p) != [channels] {
                return Err(Error::shapes(op, self.shape(x), self.shape(p)));
            }
        }
        let mut cache = NormCache {
            outer,
            channels,
            inner,
            mode,
            x_hat: Vec::new(),
            inv_std: Vec::new(),
        };
        let n = cache.group_size();
        if n < 2 {
            return Err(Error::Precondition {
                op,
                detail: format!("statistics need at least 2 samples per group, got {n}"),
            });
        }
        if mode == NormMode::Batch && inner == 1 {
            return Ok(self.normalize_rows(x, gamma, beta, eps, cache));
        }
        let xd = self.value(x).data();
        let groups = cache.groups();
        let mut sum = vec![0.0f64; groups];
        let mut sq = vec![0.0f64; groups];
        for o in 0..outer {
            for c in 0..channels {
                let gi = cache.group(o, c);
                for &v in &xd[(o * channels + c) * inner..][..inner] {
                    sum[gi] += v.as_f64();
                }
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for o in 0..outer {
            for c in 0..channels {
                let gi = cache.group(o, c);
                for &v in &xd[(o * channels + c) * inner..][..inner] {
                    let d = v.as_f64() - mean[gi];
                    sq[gi] += d * d;
                }
            }
        }
        let inv_std: Vec<f64> = sq
            .iter()
            .map(|s| 1.0 / (s / n as f64 + eps.as_f64()).sqrt())
            .collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut x_hat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for c in 0..channels {
                let gi = cache.group(o, c);
                let base = (o * channels + c) * inner;
                let (m, s) = (mean[gi], inv_std[gi]);
                for i in base..base + inner {
                    let xh = T::from_f64((xd[i].as_f64() - m) * s);
                    x_hat[i] = xh;
                    out[i] = gd[c] * xh + bd[c];
                }
            }
        }
        cache.x_hat = x_hat;
        cache.inv_std = inv_std.into_iter().map(T::from_f64).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Norm {
                x,
                gamma,
                beta,
                cache,
            },
        ))
    }
}

impl<T: Scalar> Graph<T> {
    /// Batch statistics of a `[B, F]` input, swept row by row so the inner
    /// loops run over contiguous features.
    fn normalize_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: T, mut cache: NormCache<T>) -> Var {
        let (rows, f) = (cache.outer, cache.channels);
        let xd = self.value(x).data();
        let mut mean = vec![0.0f64; f];
        for row in xd.chunks_exact(f) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0f64; f];
        for row in xd.chunks_exact(f) {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v.as_f64() - m;
                *s += d * d;
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / rows as f64 + eps.as_f64()).sqrt())
            .collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut x_hat = Vec::with_capacity(xd.len());
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks_exact(f) {
            for c in 0..f {
                let xh = T::from_f64((row[c].as_f64() - mean[c]) * inv_std[c]);
                x_hat.push(xh);
                out.push(gd[c] * xh + bd[c]);
            }
        }
        cache.x_hat = x_hat;
        cache.inv_std = inv_std.into_iter().map(T::from_f64).collect();
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::Norm {
                x,
                gamma,
                beta,
                cache,
            },
        )
    }
}

fn backward_rows<T: Scalar>(
    x: Var,
    gamma: Var,
    beta: Var,
    cache: &NormCache<T>,
    grad: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let (rows, f) = (cache.outer, cache.channels);
    let gd: Vec<f64> = acc.value(gamma).data().iter().map(|v| v.as_f64()).collect();
    // Per-feature sums of g and g * x_hat; dgamma and dbeta are these sums
    // and the x gradient needs them scaled by gamma.
    let mut sg = vec![0.0f64; f];
    let mut sgx = vec![0.0f64; f];
    for (g_row, xh_row) in grad.chunks_exact(f).zip(cache.x_hat.chunks_exact(f)) {
        for c in 0..f {
            let g = g_row[c].as_f64();
            sg[c] += g;
            sgx[c] += g * xh_row[c].as_f64();
        }
    }
    acc.add_owned(gamma, sgx.iter().map(|&v| T::from_f64(v)).collect());
    acc.add_owned(beta, sg.iter().map(|&v| T::from_f64(v)).collect());
    if !acc.wants(x) {
        return;
    }
    let n = rows as f64;
    let scale: Vec<f64> = (0..f).map(|c| cache.inv_std[c].as_f64() * gd[c]).collect();
    let m1: Vec<f64> = sg.iter().map(|v| v / n).collect();
    let m2: Vec<f64> = sgx.iter().map(|v| v / n).collect();
    let mut dx = Vec::with_capacity(grad.len());
    for (g_row, xh_row) in grad.chunks_exact(f).zip(cache.x_hat.chunks_exact(f)) {
        for c in 0..f {
            let v = scale[c] * (g_row[c].as_f64() - m1[c] - xh_row[c].as_f64() * m2[c]);
            dx.push(T::from_f64(v));
        }
    }
    acc.add_owned(x, dx);
}

pub(super) fn backward<T: Scalar>(
    x: Var,
    gamma: Var,
    beta: Var,
    cache: &NormCache<T>,
    grad: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if cache.mode == NormMode::Batch && cache.inner == 1 {
        return backward_rows(x, gamma, beta, cache, grad, acc);
    }
    let NormCache {
        outer,
        channels,
        inner,
        ..
    } = *cache;
    let gd = acc.value(gamma).clone();
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    // Per-group sums of dx_hat and dx_hat * x_hat.
    let groups = cache.groups();
    let mut s1 = vec![0.0f64; groups];
    let mut s2 = vec![0.0f64; groups];
    for o in 0..outer {
        for c in 0..channels {
            let gi = cache.group(o, c);
            let base = (o * channels + c) * inner;
            for i in base..base + inner {
                let g = grad[i];
                let xh = cache.x_hat[i];
                dgamma[c] = dgamma[c] + g * xh;
                dbeta[c] = dbeta[c] + g;
                let dxh = (g * gd.data()[c]).as_f64();
                s1[gi] += dxh;
                s2[gi] += dxh * xh.as_f64();
            }
        }
    }
    acc.add_owned(gamma, dgamma);
    acc.add_owned(beta, dbeta);
    if !acc.wants(x) {
        return;
    }
    let n = cache.group_size() as f64;
    let mut dx = vec![T::zero(); grad.len()];
    for o in 0..outer {
        for c in 0..channels {
            let gi = cache.group(o, c);
            let base = (o * channels + c) * inner;
            let inv = cache.inv_std[gi].as_f64();
            let gamma_c = gd.data()[c].as_f64();
            let (m1, m2) = (s1[gi] / n, s2[gi] / n);
            for i in base..base + inner {
                let dxh = grad[i].as_f64() * gamma_c;
                dx[i] = T::from_f64(inv * (dxh - m1 - cache.x_hat[i].as_f64() * m2));
            }
        }
    }
    acc.add_owned(x, dx);
}
