//! Elementwise, reduction and shape operations.

use std::rc::Rc;

use ndarray::{ArrayD, Axis, Ix3, IxDyn, Zip};

use super::graph::{scalar_tensor, Tensor, Var};
use super::Real;

fn same_shape<F: Real>(a: &Var<'_, F>, b: &Var<'_, F>, what: &str) {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa, sb, "{what}: shape mismatch {sa:?} vs {sb:?}");
}

/// Copies `[N, C, ...]` into `[N, C, R]`.
fn as_ncr<F: Real>(t: &Tensor<F>) -> ndarray::Array3<F> {
    let s = t.shape();
    let (n, c) = (s[0], s[1]);
    let r: usize = s[2..].iter().product();
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, c, r))
        .unwrap()
        .into_dimensionality::<Ix3>()
        .unwrap()
}

impl<'g, F: Real> Var<'g, F> {
    fn unary<V, G>(&self, value: V, grad: G) -> Var<'g, F>
    where
        V: Fn(F) -> F,
        G: Fn(F, F) -> F + 'static,
    {
        // grad(x, y) is dy/dx at input x with output y
        let x = self.value();
        let y = x.mapv(value);
        let y_rc = Rc::new(y.clone());
        self.graph.op(y, &[*self], move |g| {
            let mut out = g.clone();
            Zip::from(&mut out)
                .and(&*x)
                .and(&*y_rc)
                .for_each(|o, &xv, &yv| *o = *o * grad(xv, yv));
            vec![Some(out)]
        })
    }

    pub fn add(&self, other: Var<'g, F>) -> Var<'g, F> {
        same_shape(self, &other, "add");
        let y = &*self.value() + &*other.value();
        self.graph
            .op(y, &[*self, other], |g| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(&self, other: Var<'g, F>) -> Var<'g, F> {
        same_shape(self, &other, "sub");
        let y = &*self.value() - &*other.value();
        self.graph
            .op(y, &[*self, other], |g| vec![Some(g.clone()), Some(g.mapv(|v| -v))])
    }

    pub fn mul(&self, other: Var<'g, F>) -> Var<'g, F> {
        same_shape(self, &other, "mul");
        let (a, b) = (self.value(), other.value());
        let y = &*a * &*b;
        self.graph.op(y, &[*self, other], move |g| {
            vec![Some(g * &*b), Some(g * &*a)]
        })
    }

    pub fn scale(&self, s: F) -> Var<'g, F> {
        let y = &*self.value() * s;
        self.graph.op(y, &[*self], move |g| vec![Some(g * s)])
    }

    pub fn add_scalar(&self, s: F) -> Var<'g, F> {
        let y = &*self.value() + s;
        self.graph.op(y, &[*self], |g| vec![Some(g.clone())])
    }

    /// `1 - x`
    pub fn one_minus(&self) -> Var<'g, F> {
        self.scale(-F::one()).add_scalar(F::one())
    }

    pub fn relu(&self) -> Var<'g, F> {
        self.unary(
            |x| if x > F::zero() { x } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: F) -> Var<'g, F> {
        self.unary(
            move |x| if x > F::zero() { x } else { x * slope },
            move |x, _| if x > F::zero() { F::one() } else { slope },
        )
    }

    pub fn tanh(&self) -> Var<'g, F> {
        self.unary(|x| x.tanh(), |_, y| F::one() - y * y)
    }

    pub fn sigmoid(&self) -> Var<'g, F> {
        self.unary(sigmoid, |_, y| y * (F::one() - y))
    }

    /// Natural log of `x` clamped to `[lo, hi]`; zero gradient where clamped.
    pub fn log_clamped(&self, lo: F, hi: F) -> Var<'g, F> {
        self.unary(
            move |x| x.max(lo).min(hi).ln(),
            move |x, _| {
                if x < lo || x > hi {
                    F::zero()
                } else {
                    F::one() / x
                }
            },
        )
    }

    pub fn sum_all(&self) -> Var<'g, F> {
        let x = self.value();
        let dim = x.raw_dim();
        let y = scalar_tensor(x.sum());
        self.graph.op(y, &[*self], move |g| {
            let gv = *g.iter().next().unwrap();
            vec![Some(ArrayD::from_elem(dim.clone(), gv))]
        })
    }

    pub fn mean_all(&self) -> Var<'g, F> {
        let n = F::from(self.value().len()).unwrap();
        self.sum_all().scale(F::one() / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'g, F> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.graph.op(y, &[*self], move |g| {
            vec![Some(
                g.as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&old))
                    .unwrap(),
            )]
        })
    }

    /// `[N, K] @ [K, M] -> [N, M]`
    pub fn matmul(&self, other: Var<'g, F>) -> Var<'g, F> {
        let (a, b) = (self.value(), other.value());
        assert!(a.ndim() == 2 && b.ndim() == 2, "matmul expects rank-2 inputs");
        let a2 = a.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b2 = b.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dimensions differ");
        let y = a2.dot(&b2).into_dyn();
        let need_a = self.requires_grad();
        let need_b = other.requires_grad();
        self.graph.op(y, &[*self, other], move |g| {
            let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let a2 = a.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let b2 = b.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            vec![
                need_a.then(|| g2.dot(&b2.t()).into_dyn()),
                need_b.then(|| a2.t().dot(&g2).into_dyn()),
            ]
        })
    }

    /// Adds `bias[C]` along axis 1 of `[N, C, ...]`.
    pub fn add_bias(&self, bias: Var<'g, F>) -> Var<'g, F> {
        let x = self.value();
        let b = bias.value();
        assert_eq!(b.ndim(), 1);
        assert_eq!(x.shape()[1], b.len(), "add_bias: channel mismatch");
        let mut y = (*x).as_standard_layout().into_owned();
        {
            let shape = y.shape().to_vec();
            let mut v = y
                .view_mut()
                .into_shape_with_order((shape[0], shape[1], shape[2..].iter().product()))
                .unwrap();
            for (c, &bc) in b.iter().enumerate() {
                v.index_axis_mut(Axis(1), c).mapv_inplace(|e| e + bc);
            }
        }
        self.graph.op(y, &[*self, bias], |g| {
            let v = as_ncr(g);
            let gb = v.sum_axis(Axis(2)).sum_axis(Axis(0)).into_dyn();
            vec![Some(g.clone()), Some(gb)]
        })
    }

    /// Softmax over axis 1 of `[N, C, ...]`.
    pub fn softmax_channels(&self) -> Var<'g, F> {
        let x = self.value();
        let v = as_ncr(&x);
        let (n, c, r) = v.dim();
        let mut y = ndarray::Array3::<F>::zeros((n, c, r));
        for b in 0..n {
            for p in 0..r {
                let mut mx = F::neg_infinity();
                for k in 0..c {
                    mx = mx.max(v[[b, k, p]]);
                }
                let mut s = F::zero();
                for k in 0..c {
                    let e = (v[[b, k, p]] - mx).exp();
                    y[[b, k, p]] = e;
                    s += e;
                }
                for k in 0..c {
                    y[[b, k, p]] = y[[b, k, p]] / s;
                }
            }
        }
        let shape = x.shape().to_vec();
        let y = y.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap();
        let y_rc = Rc::new(y.clone());
        self.graph.op(y, &[*self], move |g| {
            let gv = as_ncr(g);
            let yv = as_ncr(&y_rc);
            let mut out = ndarray::Array3::<F>::zeros((n, c, r));
            for b in 0..n {
                for p in 0..r {
                    let mut dot = F::zero();
                    for k in 0..c {
                        dot += gv[[b, k, p]] * yv[[b, k, p]];
                    }
                    for k in 0..c {
                        out[[b, k, p]] = yv[[b, k, p]] * (gv[[b, k, p]] - dot);
                    }
                }
            }
            vec![Some(
                out.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap(),
            )]
        })
    }

    /// Broadcasts `[N, C]` to `[N, C, h, w]`.
    pub fn tile_spatial(&self, h: usize, w: usize) -> Var<'g, F> {
        let x = self.value();
        assert_eq!(x.ndim(), 2);
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let mut y = ArrayD::<F>::zeros(IxDyn(&[n, c, h, w]));
        for b in 0..n {
            for k in 0..c {
                y.index_axis_mut(Axis(0), b)
                    .index_axis_mut(Axis(0), k)
                    .fill(x[[b, k]]);
            }
        }
        self.graph.op(y, &[*self], move |g| {
            let v = as_ncr(g);
            vec![Some(v.sum_axis(Axis(2)).into_dyn())]
        })
    }

    /// Nearest-neighbour upsampling of `[N, C, H, W]` by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Var<'g, F> {
        let x = self.value();
        let y = upsample_nearest(&x, factor);
        let shape = x.shape().to_vec();
        self.graph.op(y, &[*self], move |g| {
            let mut out = ArrayD::<F>::zeros(IxDyn(&shape));
            for ((b, c, i, j), &gv) in g
                .view()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap()
                .indexed_iter()
            {
                out[[b, c, i / factor, j / factor]] += gv;
            }
            vec![Some(out)]
        })
    }

    /// Row-wise select: `mask[i] * self[i] + (1 - mask[i]) * old[i]` over `[N, K]`.
    pub fn blend_rows(&self, old: Var<'g, F>, mask: &[F]) -> Var<'g, F> {
        same_shape(self, &old, "blend_rows");
        let (a, b) = (self.value(), old.value());
        assert_eq!(a.shape()[0], mask.len());
        let mask: Rc<Vec<F>> = Rc::new(mask.to_vec());
        let mut y = (*a).clone();
        for (i, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            let m = mask[i];
            let old_row = b.index_axis(Axis(0), i);
            Zip::from(&mut row)
                .and(&old_row)
                .for_each(|o, &ov| *o = m * *o + (F::one() - m) * ov);
        }
        self.graph.op(y, &[*self, old], move |g| {
            let mut ga = g.clone();
            let mut gb = g.clone();
            for (i, (mut ra, mut rb)) in ga
                .axis_iter_mut(Axis(0))
                .zip(gb.axis_iter_mut(Axis(0)))
                .enumerate()
            {
                let m = mask[i];
                ra.mapv_inplace(|v| v * m);
                rb.mapv_inplace(|v| v * (F::one() - m));
            }
            vec![Some(ga), Some(gb)]
        })
    }
}

/// Concatenates along axis 1.
pub fn concat_channels<'g, F: Real>(parts: &[Var<'g, F>]) -> Var<'g, F> {
    assert!(!parts.is_empty());
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let y = ndarray::concatenate(Axis(1), &views).expect("concat_channels: incompatible shapes");
    let widths: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
    let graph = parts[0].graph;
    graph.op(y, parts, move |g| {
        let mut start = 0;
        widths
            .iter()
            .map(|&w| {
                let part = g
                    .slice_axis(Axis(1), ndarray::Slice::from(start..start + w))
                    .to_owned();
                start += w;
                Some(part)
            })
            .collect()
    })
}

/// Gathers rows `ids` of `table[V, E]` into `[ids.len(), E]`.
pub fn embedding<'g, F: Real>(table: Var<'g, F>, ids: &[usize]) -> Var<'g, F> {
    let t = table.value();
    assert_eq!(t.ndim(), 2);
    let e = t.shape()[1];
    let mut y = ArrayD::<F>::zeros(IxDyn(&[ids.len(), e]));
    for (r, &id) in ids.iter().enumerate() {
        y.index_axis_mut(Axis(0), r).assign(&t.index_axis(Axis(0), id));
    }
    let ids = ids.to_vec();
    let shape = t.shape().to_vec();
    table.graph.op(y, &[table], move |g| {
        let mut out = ArrayD::<F>::zeros(IxDyn(&shape));
        for (r, &id) in ids.iter().enumerate() {
            let mut row = out.index_axis_mut(Axis(0), id);
            row += &g.index_axis(Axis(0), r);
        }
        vec![Some(out)]
    })
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn upsample_nearest<F: Real>(x: &Tensor<F>, factor: usize) -> Tensor<F> {
    let s = x.shape();
    assert_eq!(s.len(), 4, "upsample_nearest expects [N, C, H, W]");
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    ArrayD::from_shape_fn(IxDyn(&[n, c, h * factor, w * factor]), |idx| {
        x[[idx[0], idx[1], idx[2] / factor, idx[3] / factor]]
    })
}

/// Region-weighted sum `out[n, k] = Σ_l masks[n, l] · channels[n, l, k]`
/// for channels `[N, L, K, H, W]` and masks `[N, L, H, W]`.
pub fn compose_regions<'g, F: Real>(channels: Var<'g, F>, masks: Var<'g, F>) -> Var<'g, F> {
    let (c, m) = (channels.value(), masks.value());
    let cs = c.shape().to_vec();
    let ms = m.shape();
    assert_eq!(cs.len(), 5, "compose_regions: channels must be [N, L, K, H, W]");
    assert_eq!(
        [cs[0], cs[1], cs[3], cs[4]],
        [ms[0], ms[1], ms[2], ms[3]],
        "compose_regions: mask shape {ms:?} does not fit channels {cs:?}"
    );
    let (n, l, k, h, w) = (cs[0], cs[1], cs[2], cs[3], cs[4]);
    let hw = h * w;
    let c = Rc::new(c.as_standard_layout().into_owned());
    let m = Rc::new(m.as_standard_layout().into_owned());
    let cv = c.as_slice().unwrap();
    let mv = m.as_slice().unwrap();
    let mut y = vec![F::zero(); n * k * hw];
    for b in 0..n {
        for r in 0..l {
            let mask = &mv[(b * l + r) * hw..][..hw];
            for ch in 0..k {
                let src = &cv[((b * l + r) * k + ch) * hw..][..hw];
                let dst = &mut y[(b * k + ch) * hw..][..hw];
                for p in 0..hw {
                    dst[p] += mask[p] * src[p];
                }
            }
        }
    }
    let y = ArrayD::from_shape_vec(IxDyn(&[n, k, h, w]), y).unwrap();
    channels.graph.op(y, &[channels, masks], move |g| {
        let g = g.as_standard_layout();
        let gv = g.as_slice().unwrap();
        let (cv, mv) = (c.as_slice().unwrap(), m.as_slice().unwrap());
        let mut gc = vec![F::zero(); n * l * k * hw];
        let mut gm = vec![F::zero(); n * l * hw];
        for b in 0..n {
            for r in 0..l {
                let mask = &mv[(b * l + r) * hw..][..hw];
                let gmask = &mut gm[(b * l + r) * hw..][..hw];
                for ch in 0..k {
                    let go = &gv[(b * k + ch) * hw..][..hw];
                    let src = &cv[((b * l + r) * k + ch) * hw..][..hw];
                    let dst = &mut gc[((b * l + r) * k + ch) * hw..][..hw];
                    for p in 0..hw {
                        dst[p] = go[p] * mask[p];
                        gmask[p] += go[p] * src[p];
                    }
                }
            }
        }
        vec![
            Some(ArrayD::from_shape_vec(IxDyn(&[n, l, k, h, w]), gc).unwrap()),
            Some(ArrayD::from_shape_vec(IxDyn(&[n, l, h, w]), gm).unwrap()),
        ]
    })
}
