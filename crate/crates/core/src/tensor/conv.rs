//! 2-D cross-correlation and its adjoints via im2col + GEMM.
//!
//! Three bilinear ops close under differentiation:
//! `conv2d(x, K)`, its input adjoint `conv_adjoint(y, K)` (the transposed
//! convolution) and the kernel gradient `kernel_grad(x, gy)`. Each one's
//! backward pass is expressed with the other two.

use rayon::prelude::*;

use super::{numel, Backward, Element, Tensor};
use crate::error::{Error, Result};

/// Geometry of a forward convolution `C×H×W -> F×Ho×Wo`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    #[allow(clippy::too_many_arguments)]
    fn new(
        op: &'static str,
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        f: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape(op, "stride must be positive"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                op,
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
            ));
        }
        Ok(Geom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_sample(&self) -> usize {
        self.c * self.h * self.w
    }

    fn out_sample(&self) -> usize {
        self.f * self.ho * self.wo
    }

    /// Input coordinate for output position `o` and kernel tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn im2col<T: Element>(x: &[T], g: &Geom, cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * plane;
                for oy in 0..g.ho {
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let Some(iy) = g.src(oy, ki, g.h) else {
                        dst.fill(T::zero());
                        continue;
                    };
                    let src_row = &x[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        *d = match g.src(ox, kj, g.w) {
                            Some(ix) => src_row[ix],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &Geom, x: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * plane;
                for oy in 0..g.ho {
                    let Some(iy) = g.src(oy, ki, g.h) else { continue };
                    let base = (c * g.h + iy) * g.w;
                    for ox in 0..g.wo {
                        if let Some(ix) = g.src(ox, kj, g.w) {
                            x[base + ix] = x[base + ix] + cols[row + oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn forward_data<T: Element>(x: &[T], k: &[T], g: &Geom) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.out_sample()];
    out.par_chunks_mut(g.out_sample())
        .zip(x.par_chunks(g.in_sample()))
        .for_each(|(out_n, x_n)| {
            let mut cols = vec![T::zero(); g.patch() * g.out_plane()];
            im2col(x_n, g, &mut cols);
            T::gemm(g.f, g.patch(), g.out_plane(), k, false, &cols, false, out_n, false);
        });
    out
}

fn adjoint_data<T: Element>(y: &[T], k: &[T], g: &Geom) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.in_sample()];
    out.par_chunks_mut(g.in_sample())
        .zip(y.par_chunks(g.out_sample()))
        .for_each(|(x_n, y_n)| {
            let mut cols = vec![T::zero(); g.patch() * g.out_plane()];
            T::gemm(g.patch(), g.f, g.out_plane(), k, true, y_n, false, &mut cols, false);
            col2im(&cols, g, x_n);
        });
    out
}

fn kernel_grad_data<T: Element>(x: &[T], gy: &[T], g: &Geom) -> Vec<T> {
    let partials: Vec<Vec<T>> = x
        .par_chunks(g.in_sample())
        .zip(gy.par_chunks(g.out_sample()))
        .map(|(x_n, gy_n)| {
            let mut cols = vec![T::zero(); g.patch() * g.out_plane()];
            im2col(x_n, g, &mut cols);
            let mut part = vec![T::zero(); g.f * g.patch()];
            T::gemm(g.f, g.out_plane(), g.patch(), gy_n, false, &cols, true, &mut part, false);
            part
        })
        .collect();
    // fixed summation order keeps results independent of thread scheduling
    let mut acc = vec![T::zero(); g.f * g.patch()];
    for part in partials {
        for (a, p) in acc.iter_mut().zip(part) {
            *a = *a + p;
        }
    }
    acc
}

fn dims4<T: Element>(op: &'static str, what: &str, t: &Tensor<T>) -> Result<[usize; 4]> {
    t.shape().try_into().map_err(|_| {
        Error::shape(op, format!("{what} must be rank 4, got {:?}", t.shape()))
    })
}

/// Geometry of `conv2d(x, k)`.
fn conv_geom<T: Element>(
    op: &'static str,
    x: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Geom> {
    let [n, c, h, w] = dims4(op, "input", x)?;
    let [f, kc, kh, kw] = dims4(op, "kernel", k)?;
    if kc != c {
        return Err(Error::shape(
            op,
            format!("input has {c} channels but kernel {:?} expects {kc}", k.shape()),
        ));
    }
    Geom::new(op, n, c, h, w, f, kh, kw, stride, pad)
}

/// Geometry of the conv whose adjoint maps `y` (its output) back to a
/// `h×w` input.
fn adjoint_geom<T: Element>(
    op: &'static str,
    y: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
) -> Result<Geom> {
    let [n, f, ho, wo] = dims4(op, "input", y)?;
    let [kf, c, kh, kw] = dims4(op, "kernel", k)?;
    if kf != f {
        return Err(Error::shape(
            op,
            format!("input has {f} channels but kernel {:?} expects {kf}", k.shape()),
        ));
    }
    let g = Geom::new(op, n, c, h, w, f, kh, kw, stride, pad)?;
    if (g.ho, g.wo) != (ho, wo) {
        return Err(Error::shape(
            op,
            format!("{h}x{w} target does not convolve to the {ho}x{wo} input"),
        ));
    }
    Ok(g)
}

struct Conv2dOp {
    stride: usize,
    pad: usize,
}

impl<T: Element> Backward<T> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(
        &self,
        g: &Tensor<T>,
        inputs: &[Tensor<T>],
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, k) = (&inputs[0], &inputs[1]);
        let dx = if needs[0] {
            let (h, w) = (x.shape()[2], x.shape()[3]);
            Some(conv_adjoint(g, k, self.stride, self.pad, h, w)?)
        } else {
            None
        };
        let dk = if needs[1] {
            let (kh, kw) = (k.shape()[2], k.shape()[3]);
            Some(kernel_grad(x, g, self.stride, self.pad, kh, kw)?)
        } else {
            None
        };
        Ok(vec![dx, dk])
    }
}

struct ConvAdjointOp {
    stride: usize,
    pad: usize,
}

impl<T: Element> Backward<T> for ConvAdjointOp {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn backward(
        &self,
        g: &Tensor<T>,
        inputs: &[Tensor<T>],
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (y, k) = (&inputs[0], &inputs[1]);
        let dy = if needs[0] {
            Some(g.conv2d(k, self.stride, self.pad)?)
        } else {
            None
        };
        let dk = if needs[1] {
            let (kh, kw) = (k.shape()[2], k.shape()[3]);
            Some(kernel_grad(g, y, self.stride, self.pad, kh, kw)?)
        } else {
            None
        };
        Ok(vec![dy, dk])
    }
}

struct KernelGradOp {
    stride: usize,
    pad: usize,
}

impl<T: Element> Backward<T> for KernelGradOp {
    fn name(&self) -> &'static str {
        "conv2d_kernel_grad"
    }

    fn backward(
        &self,
        g: &Tensor<T>,
        inputs: &[Tensor<T>],
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, gy) = (&inputs[0], &inputs[1]);
        let dx = if needs[0] {
            let (h, w) = (x.shape()[2], x.shape()[3]);
            Some(conv_adjoint(gy, g, self.stride, self.pad, h, w)?)
        } else {
            None
        };
        let dgy = if needs[1] {
            Some(x.conv2d(g, self.stride, self.pad)?)
        } else {
            None
        };
        Ok(vec![dx, dgy])
    }
}

/// Adjoint of `conv2d(·, k)` producing an `h×w` result.
fn conv_adjoint<T: Element>(
    y: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let g = adjoint_geom("conv_transpose2d", y, k, stride, pad, h, w)?;
    let data = adjoint_data(y.data(), k.data(), &g);
    Ok(Tensor::from_op(
        vec![g.n, g.c, g.h, g.w],
        data,
        ConvAdjointOp { stride, pad },
        vec![y.clone(), k.clone()],
    ))
}

/// `∂⟨conv2d(x, K), gy⟩ / ∂K`.
fn kernel_grad<T: Element>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    kh: usize,
    kw: usize,
) -> Result<Tensor<T>> {
    let op = "conv2d_kernel_grad";
    let [n, c, h, w] = dims4(op, "input", x)?;
    let [gn, f, ho, wo] = dims4(op, "output grad", gy)?;
    let g = Geom::new(op, n, c, h, w, f, kh, kw, stride, pad)?;
    if gn != n || (g.ho, g.wo) != (ho, wo) {
        return Err(Error::shape(
            op,
            format!("gradient {:?} does not match conv of {:?}", gy.shape(), x.shape()),
        ));
    }
    let data = kernel_grad_data(x.data(), gy.data(), &g);
    debug_assert_eq!(data.len(), numel(&[f, c, kh, kw]));
    Ok(Tensor::from_op(
        vec![f, c, kh, kw],
        data,
        KernelGradOp { stride, pad },
        vec![x.clone(), gy.clone()],
    ))
}

impl<T: Element> Tensor<T> {
    /// Cross-correlation of `[N,C,H,W]` input with a `[F,C,kh,kw]` kernel.
    pub fn conv2d(&self, kernel: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let g = conv_geom("conv2d", self, kernel, stride, pad)?;
        let data = forward_data(self.data(), kernel.data(), &g);
        Ok(Tensor::from_op(
            vec![g.n, g.f, g.ho, g.wo],
            data,
            Conv2dOp { stride, pad },
            vec![self.clone(), kernel.clone()],
        ))
    }

    /// Transposed convolution of `[N,C,H,W]` input with a `[C,F,kh,kw]`
    /// kernel; output extent `(H-1)·stride - 2·pad + kh`.
    ///
    /// With the same kernel tensor this is the exact adjoint of
    /// [`conv2d`](Self::conv2d).
    pub fn conv_transpose2d(
        &self,
        kernel: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let op = "conv_transpose2d";
        let [_, _, h, w] = dims4(op, "input", self)?;
        let [_, _, kh, kw] = dims4(op, "kernel", kernel)?;
        let extent = |i: usize, k: usize| -> Result<usize> {
            ((i.max(1) - 1) * stride + k)
                .checked_sub(2 * pad)
                .filter(|&e| e > 0)
                .ok_or_else(|| Error::shape(op, format!("padding {pad} leaves an empty output")))
        };
        let (oh, ow) = (extent(h, kh)?, extent(w, kw)?);
        conv_adjoint(self, kernel, stride, pad, oh, ow)
    }

    /// Transposed convolution with an explicit `out_h×out_w` result, for
    /// strides that do not tile the forward input exactly.
    pub fn conv_transpose2d_to(
        &self,
        kernel: &Tensor<T>,
        stride: usize,
        pad: usize,
        out_h: usize,
        out_w: usize,
    ) -> Result<Tensor<T>> {
        conv_adjoint(self, kernel, stride, pad, out_h, out_w)
    }
}
