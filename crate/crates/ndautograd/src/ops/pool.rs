use super::Op;
use crate::error::{Error, Result};
use crate::graph::{GradAcc, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Average,
}

#[derive(Clone, Debug)]
pub(crate) struct PoolGeom {
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl PoolGeom {
    /// Clipped input ranges covered by output cell `(oy, ox)`.
    fn window_at(&self, oy: usize, ox: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let y0 = (oy * self.stride) as isize - self.pad as isize;
        let x0 = (ox * self.stride) as isize - self.pad as isize;
        let clip = |start: isize, extent: usize| {
            let lo = start.max(0) as usize;
            let hi = ((start + self.window as isize).max(0) as usize).min(extent);
            lo..hi
        };
        (clip(y0, self.h), clip(x0, self.w))
    }
}

impl<T: Scalar> Graph<T> {
    /// Windowed max or mean over the last two axes of `[C, H, W]` or
    /// `[N, C, H, W]`.
    pub fn pool2d(&mut self, input: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        self.pool2d_padded(input, kind, window, stride, 0)
    }

    /// As [`Graph::pool2d`] with `pad` cells of padding on every side. Padding
    /// never wins a max and is excluded from the average's denominator.
    pub fn pool2d_padded(
        &mut self,
        input: Var,
        kind: PoolKind,
        window: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if !(shape.len() == 3 || shape.len() == 4) {
            return Err(Error::dim("pool2d", format!("expected rank 3 or 4, got {shape:?}")));
        }
        if window == 0 || stride == 0 {
            return Err(Error::dim("pool2d", "window and stride must be positive"));
        }
        if pad >= window {
            return Err(Error::dim("pool2d", format!("padding {pad} must be smaller than window {window}")));
        }
        let rank = shape.len();
        let (h, w) = (shape[rank - 2], shape[rank - 1]);
        if window > h + 2 * pad || window > w + 2 * pad {
            return Err(Error::dim(
                "pool2d",
                format!("window {window} exceeds spatial extent {h}x{w} (padding {pad})"),
            ));
        }
        let geom = PoolGeom {
            planes: shape[..rank - 2].iter().product(),
            h,
            w,
            window,
            stride,
            pad,
            oh: (h + 2 * pad - window) / stride + 1,
            ow: (w + 2 * pad - window) / stride + 1,
        };
        let x = self.value(input).data();
        let out_plane = geom.oh * geom.ow;
        let mut out = vec![T::zero(); geom.planes * out_plane];
        let mut argmax = Vec::new();
        if kind == PoolKind::Max {
            argmax.reserve(out.len());
        }
        for p in 0..geom.planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            for oy in 0..geom.oh {
                for ox in 0..geom.ow {
                    let (ys, xs) = geom.window_at(oy, ox);
                    let o = &mut out[p * out_plane + oy * geom.ow + ox];
                    match kind {
                        PoolKind::Max => {
                            // First maximal element in scan order wins ties.
                            let mut best = (ys.start * w + xs.start, src[ys.start * w + xs.start]);
                            for y in ys.clone() {
                                for xx in xs.clone() {
                                    let v = src[y * w + xx];
                                    if v > best.1 {
                                        best = (y * w + xx, v);
                                    }
                                }
                            }
                            *o = best.1;
                            argmax.push(p * h * w + best.0);
                        }
                        PoolKind::Average => {
                            let count = ys.len() * xs.len();
                            let mut s = T::zero();
                            for y in ys.clone() {
                                for xx in xs.clone() {
                                    s = s + src[y * w + xx];
                                }
                            }
                            *o = s / T::from_f64(count as f64);
                        }
                    }
                }
            }
        }
        let mut out_shape = shape[..rank - 2].to_vec();
        out_shape.extend([geom.oh, geom.ow]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Pool {
                x: input,
                kind,
                geom,
                argmax,
            },
        ))
    }
}

pub(super) fn backward<T: Scalar>(
    x: Var,
    kind: PoolKind,
    g: &PoolGeom,
    argmax: &[usize],
    grad: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let Some(dx) = acc.slot(x) else {
        return;
    };
    match kind {
        PoolKind::Max => {
            for (&src, &gv) in argmax.iter().zip(grad) {
                dx[src] = dx[src] + gv;
            }
        }
        PoolKind::Average => {
            let out_plane = g.oh * g.ow;
            for p in 0..g.planes {
                let dst = &mut dx[p * g.h * g.w..(p + 1) * g.h * g.w];
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let (ys, xs) = g.window_at(oy, ox);
                        let share = grad[p * out_plane + oy * g.ow + ox] / T::from_f64((ys.len() * xs.len()) as f64);
                        for y in ys {
                            for xx in xs.clone() {
                                dst[y * g.w + xx] = dst[y * g.w + xx] + share;
                            }
                        }
                    }
                }
            }
        }
    }
}
