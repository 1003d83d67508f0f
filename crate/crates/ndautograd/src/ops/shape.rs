use super::Op;
use crate::error::{Error, Result};
use crate::graph::{GradAcc, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// Same data under a new shape with equal element count. Does not copy.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// Sub-range `start..start + len` of `x` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * dim + start) * inner..(o * dim + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Narrow {
                x,
                outer,
                dim,
                inner,
                start,
                len,
            },
        ))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shapes("concat", &base, s));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &size) in parts.iter().zip(&sizes) {
                out.extend_from_slice(&self.value(p).data()[o * size * inner..(o + 1) * size * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
                sizes,
            },
        ))
    }
}

pub(super) fn concat_backward<T: Scalar>(
    parts: &[Var],
    outer: usize,
    inner: usize,
    sizes: &[usize],
    grad: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let total: usize = sizes.iter().sum();
    let mut offset = 0;
    for (&p, &size) in parts.iter().zip(sizes) {
        if let Some(dst) = acc.slot(p) {
            for o in 0..outer {
                let src = &grad[(o * total + offset) * inner..(o * total + offset + size) * inner];
                for (d, &g) in dst[o * size * inner..(o + 1) * size * inner].iter_mut().zip(src) {
                    *d = *d + g;
                }
            }
        }
        offset += size;
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn narrow_backward<T: Scalar>(
    x: Var,
    outer: usize,
    dim: usize,
    inner: usize,
    start: usize,
    len: usize,
    grad: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let Some(dst) = acc.slot(x) else {
        return;
    };
    for o in 0..outer {
        let src = &grad[o * len * inner..(o + 1) * len * inner];
        let target = &mut dst[(o * dim + start) * inner..(o * dim + start + len) * inner];
        for (d, &g) in target.iter_mut().zip(src) {
            *d = *d + g;
        }
    }
}
