//! 2-D convolution and transposed convolution via im2col + gemm (NCHW).

use std::rc::Rc;

use ndarray::{Array2, ArrayD, ArrayView2, IxDyn};

use super::graph::{Tensor, Var};
use super::Real;

/// Geometry of a sliding window over an `h × w` plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Window { kernel, stride, pad }
    }

    /// Output extent of a convolution over an input extent.
    pub fn conv_out(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad;
        assert!(padded >= self.kernel, "window larger than padded input");
        (padded - self.kernel) / self.stride + 1
    }

    /// Output extent of a transposed convolution over an input extent.
    pub fn deconv_out(&self, len: usize) -> usize {
        ((len - 1) * self.stride + self.kernel)
            .checked_sub(2 * self.pad)
            .expect("transposed window padding too large")
    }
}

/// Unfolds `x[n, c, h, w]` into `[c·k·k, n·ho·wo]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<F: Real>(
    x: &[F],
    (n, c, h, w): (usize, usize, usize, usize),
    win: Window,
    (ho, wo): (usize, usize),
) -> Vec<F> {
    let k = win.kernel;
    let cols_n = n * ho * wo;
    let mut out = vec![F::zero(); c * k * k * cols_n];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut out[row * cols_n..(row + 1) * cols_n];
                for b in 0..n {
                    let plane = &x[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                        let drow = &mut dst[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * win.stride + kj) as isize - win.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters `[c·k·k, n·ho·wo]` back onto `[n, c, h, w]`.
pub(crate) fn col2im<F: Real>(
    cols: &[F],
    (n, c, h, w): (usize, usize, usize, usize),
    win: Window,
    (ho, wo): (usize, usize),
) -> Vec<F> {
    let k = win.kernel;
    let cols_n = n * ho * wo;
    let mut out = vec![F::zero(); n * c * h * w];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..n {
                    let plane = &mut out[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * win.stride + kj) as isize - win.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `[n, c, r]` (contiguous) to `[c, n·r]`.
fn batch_to_channel_major<F: Real>(x: &[F], n: usize, c: usize, r: usize) -> Array2<F> {
    let mut out = Array2::<F>::zeros((c, n * r));
    let dst = out.as_slice_mut().unwrap();
    for b in 0..n {
        for ci in 0..c {
            let s = &x[(b * c + ci) * r..(b * c + ci + 1) * r];
            dst[ci * n * r + b * r..ci * n * r + (b + 1) * r].copy_from_slice(s);
        }
    }
    out
}

/// `[c, n·r]` to `[n, c, r]` (flat).
fn channel_major_to_batch<F: Real>(m: ArrayView2<'_, F>, n: usize, c: usize, r: usize) -> Vec<F> {
    let m = m.as_standard_layout();
    let src = m.as_slice().unwrap();
    let mut out = vec![F::zero(); n * c * r];
    for b in 0..n {
        for ci in 0..c {
            out[(b * c + ci) * r..(b * c + ci + 1) * r]
                .copy_from_slice(&src[ci * n * r + b * r..ci * n * r + (b + 1) * r]);
        }
    }
    out
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected a [N, C, H, W] tensor");
    (shape[0], shape[1], shape[2], shape[3])
}

fn contiguous<F: Real>(t: &Tensor<F>) -> Vec<F> {
    t.as_standard_layout().iter().copied().collect()
}

impl<'g, F: Real> Var<'g, F> {
    /// Convolution of `self[N, C, H, W]` with `weight[O, C, k, k]`.
    pub fn conv2d(&self, weight: Var<'g, F>, win: Window) -> Var<'g, F> {
        let x = self.value();
        let w = weight.value();
        let (n, c, h, wd) = dims4(x.shape());
        let (o, wc, k1, k2) = dims4(w.shape());
        assert_eq!(c, wc, "conv2d: channel mismatch");
        assert!(k1 == win.kernel && k2 == win.kernel, "conv2d: kernel mismatch");
        let (ho, wo) = (win.conv_out(h), win.conv_out(wd));
        let ckk = c * win.kernel * win.kernel;
        let cols = Array2::from_shape_vec(
            (ckk, n * ho * wo),
            im2col(&contiguous(&x), (n, c, h, wd), win, (ho, wo)),
        )
        .unwrap();
        let wmat = Array2::from_shape_vec((o, ckk), contiguous(&w)).unwrap();
        let out = wmat.dot(&cols);
        let y = ArrayD::from_shape_vec(
            IxDyn(&[n, o, ho, wo]),
            channel_major_to_batch(out.view(), n, o, ho * wo),
        )
        .unwrap();
        let need_x = self.requires_grad();
        let need_w = weight.requires_grad();
        let cols = Rc::new(cols);
        let wshape = w.shape().to_vec();
        self.graph.op(y, &[*self, weight], move |g| {
            let gmat = batch_to_channel_major(&contiguous(g), n, o, ho * wo);
            let gw = need_w.then(|| {
                gmat.dot(&cols.t())
                    .into_shape_with_order(IxDyn(&wshape))
                    .unwrap()
            });
            let gx = need_x.then(|| {
                let gcols = wmat.t().dot(&gmat);
                let gcols = gcols.as_standard_layout();
                ArrayD::from_shape_vec(
                    IxDyn(&[n, c, h, wd]),
                    col2im(gcols.as_slice().unwrap(), (n, c, h, wd), win, (ho, wo)),
                )
                .unwrap()
            });
            vec![gx, gw]
        })
    }

    /// Transposed convolution of `self[N, C, H, W]` with `weight[C, O, k, k]`.
    pub fn conv_transpose2d(&self, weight: Var<'g, F>, win: Window) -> Var<'g, F> {
        let x = self.value();
        let w = weight.value();
        let (n, c, h, wd) = dims4(x.shape());
        let (wc, o, k1, k2) = dims4(w.shape());
        assert_eq!(c, wc, "conv_transpose2d: channel mismatch");
        assert!(k1 == win.kernel && k2 == win.kernel, "conv_transpose2d: kernel mismatch");
        let (ho, wo) = (win.deconv_out(h), win.deconv_out(wd));
        debug_assert_eq!(win.conv_out(ho), h);
        let okk = o * win.kernel * win.kernel;
        let xmat = Rc::new(batch_to_channel_major(&contiguous(&x), n, c, h * wd));
        let wmat = Array2::from_shape_vec((c, okk), contiguous(&w)).unwrap();
        let cols = wmat.t().dot(&*xmat);
        let cols = cols.as_standard_layout();
        let y = ArrayD::from_shape_vec(
            IxDyn(&[n, o, ho, wo]),
            col2im(cols.as_slice().unwrap(), (n, o, ho, wo), win, (h, wd)),
        )
        .unwrap();
        let need_x = self.requires_grad();
        let need_w = weight.requires_grad();
        let wshape = w.shape().to_vec();
        self.graph.op(y, &[*self, weight], move |g| {
            let gcols = Array2::from_shape_vec(
                (okk, n * h * wd),
                im2col(&contiguous(g), (n, o, ho, wo), win, (h, wd)),
            )
            .unwrap();
            let gx = need_x.then(|| {
                let gxm = wmat.dot(&gcols);
                ArrayD::from_shape_vec(
                    IxDyn(&[n, c, h, wd]),
                    channel_major_to_batch(gxm.view(), n, c, h * wd),
                )
                .unwrap()
            });
            let gw = need_w.then(|| {
                xmat.dot(&gcols.t())
                    .into_shape_with_order(IxDyn(&wshape))
                    .unwrap()
            });
            vec![gx, gw]
        })
    }
}
