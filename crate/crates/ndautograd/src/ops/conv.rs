use super::Op;
use crate::error::{Error, Result};
use crate::graph::{GradAcc, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stride and per-axis zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2dSpec {
            stride,
            pad_h: padding,
            pad_w: padding,
        }
    }

    /// Stride 1 with "same" padding for an odd `kh x kw` kernel.
    pub fn same(kh: usize, kw: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            pad_h: kh / 2,
            pad_w: kw / 2,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: Conv2dSpec,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.spec.stride == 1
            && self.spec.pad_h == 0
            && self.spec.pad_w == 0
    }
}

/// Unfolds one `c_in x h x w` sample into a `(c_in*kh*kw) x (oh*ow)` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let plane = g.out_plane();
    let (s, ph, pw) = (g.spec.stride as isize, g.spec.pad_h as isize, g.spec.pad_w as isize);
    for c in 0..g.c_in {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut col[((c * g.kh + i) * g.kw + j) * plane..][..plane];
                for oy in 0..g.oh {
                    let y = oy as isize * s + i as isize - ph;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if y < 0 || y >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let line = &src[y as usize * g.w..(y as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let xx = ox as isize * s + j as isize - pw;
                        *d = if xx < 0 || xx >= g.w as isize {
                            T::zero()
                        } else {
                            line[xx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a column matrix back onto a sample.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.out_plane();
    let (s, ph, pw) = (g.spec.stride as isize, g.spec.pad_h as isize, g.spec.pad_w as isize);
    for c in 0..g.c_in {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &col[((c * g.kh + i) * g.kw + j) * plane..][..plane];
                for oy in 0..g.oh {
                    let y = oy as isize * s + i as isize - ph;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let line = &mut dst[y as usize * g.w..(y as usize + 1) * g.w];
                    for (ox, &v) in row[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let xx = ox as isize * s + j as isize - pw;
                        if xx >= 0 && xx < g.w as isize {
                            line[xx as usize] = line[xx as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// Cross-correlation of `input: [C_in, H, W]` (or batched `[N, C_in, H, W]`)
    /// with `kernel: [C_out, C_in, kh, kw]`, zero padding on both axes.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_with(input, kernel, Conv2dSpec::new(stride, padding))
    }

    pub fn conv2d_with(&mut self, input: Var, kernel: Var, spec: Conv2dSpec) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        let batched = si.len() == 4;
        if !(si.len() == 3 || batched) || sk.len() != 4 {
            return Err(Error::shapes("conv2d", &si, &sk));
        }
        if spec.stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        let (batch, rest) = if batched { (si[0], &si[1..]) } else { (1, &si[..]) };
        let (c_in, h, w) = (rest[0], rest[1], rest[2]);
        let (c_out, kc, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if kc != c_in {
            return Err(Error::shapes("conv2d", &si, &sk));
        }
        if kh > h + 2 * spec.pad_h || kw > w + 2 * spec.pad_w {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kh}x{kw} exceeds padded input {}x{}", h + 2 * spec.pad_h, w + 2 * spec.pad_w),
            ));
        }
        let geom = ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh: (h + 2 * spec.pad_h - kh) / spec.stride + 1,
            ow: (w + 2 * spec.pad_w - kw) / spec.stride + 1,
            spec,
        };
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let (rows, plane) = (geom.col_rows(), geom.out_plane());
        let in_sample = c_in * h * w;
        let out_sample = c_out * plane;
        let mut out = vec![T::zero(); batch * out_sample];
        let mut col = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * plane] };
        for n in 0..batch {
            let xs = &x[n * in_sample..(n + 1) * in_sample];
            let cols: &[T] = if geom.is_pointwise() {
                xs
            } else {
                im2col(xs, &geom, &mut col);
                &col
            };
            T::gemm(
                false,
                false,
                c_out,
                rows,
                plane,
                T::one(),
                k,
                cols,
                T::zero(),
                &mut out[n * out_sample..(n + 1) * out_sample],
            );
        }
        let shape = if batched {
            vec![batch, c_out, geom.oh, geom.ow]
        } else {
            vec![c_out, geom.oh, geom.ow]
        };
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Conv2d {
                input,
                kernel,
                geom,
            },
        ))
    }
}

pub(super) fn backward<T: Scalar>(input: Var, kernel: Var, g: &ConvGeom, grad: &[T], acc: &mut GradAcc<'_, T>) {
    let x = acc.value(input).clone();
    let k = acc.value(kernel).clone();
    let (rows, plane) = (g.col_rows(), g.out_plane());
    let in_sample = g.c_in * g.h * g.w;
    let out_sample = g.c_out * plane;
    let pointwise = g.is_pointwise();
    let mut col = vec![T::zero(); if pointwise { 0 } else { rows * plane }];

    if acc.wants(kernel) {
        let mut dk = vec![T::zero(); k.numel()];
        for n in 0..g.batch {
            let xs = &x.data()[n * in_sample..(n + 1) * in_sample];
            let cols: &[T] = if pointwise {
                xs
            } else {
                im2col(xs, g, &mut col);
                &col
            };
            let gs = &grad[n * out_sample..(n + 1) * out_sample];
            T::gemm(false, true, g.c_out, plane, rows, T::one(), gs, cols, T::one(), &mut dk);
        }
        acc.add_owned(kernel, dk);
    }

    if let Some(dx) = acc.slot(input) {
        for n in 0..g.batch {
            let gs = &grad[n * out_sample..(n + 1) * out_sample];
            let dxs = &mut dx[n * in_sample..(n + 1) * in_sample];
            if pointwise {
                T::gemm(true, false, rows, g.c_out, plane, T::one(), k.data(), gs, T::one(), dxs);
            } else {
                T::gemm(true, false, rows, g.c_out, plane, T::one(), k.data(), gs, T::zero(), &mut col);
                col2im(&col, g, dxs);
            }
        }
    }
}
