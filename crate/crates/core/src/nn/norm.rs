//! Batch normalisation over axis 1 of `[N, C, ...]`.

use std::rc::Rc;

use ndarray::{Array1, Array3, ArrayD, Axis, IxDyn};

use super::graph::{Tensor, Var};
use super::Real;

/// Per-channel statistics of one training-mode pass.
pub struct BatchStats<F> {
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

fn to_ncr<F: Real>(t: &Tensor<F>) -> Array3<F> {
    let s = t.shape();
    let r: usize = s[2..].iter().product();
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order((s[0], s[1], r))
        .unwrap()
}

impl<'g, F: Real> Var<'g, F> {
    /// Normalises with the batch statistics (biased variance), then applies
    /// `gamma`/`beta`. Returns the statistics for running-average updates.
    pub fn batch_norm_train(
        &self,
        gamma: Var<'g, F>,
        beta: Var<'g, F>,
        eps: F,
    ) -> (Var<'g, F>, BatchStats<F>) {
        let x = self.value();
        let shape = x.shape().to_vec();
        let v = to_ncr(&x);
        let (n, c, r) = v.dim();
        let m = F::from(n * r).unwrap();
        let mean = v.sum_axis(Axis(2)).sum_axis(Axis(0)) / m;
        let mut var = Array1::<F>::zeros(c);
        for ((_, ch, _), &e) in v.indexed_iter() {
            let d = e - mean[ch];
            var[ch] += d * d;
        }
        var.mapv_inplace(|s| s / m);
        let inv_std = var.mapv(|s| F::one() / (s + eps).sqrt());
        let (gm, bt) = (gamma.value(), beta.value());
        let mut xhat = Array3::<F>::zeros((n, c, r));
        let mut y = Array3::<F>::zeros((n, c, r));
        for ((b, ch, p), &e) in v.indexed_iter() {
            let h = (e - mean[ch]) * inv_std[ch];
            xhat[[b, ch, p]] = h;
            y[[b, ch, p]] = gm[ch] * h + bt[ch];
        }
        let y = y.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap();
        let xhat = Rc::new(xhat);
        let gm = Rc::clone(&gm);
        let out = self.graph.op(y, &[*self, gamma, beta], move |g| {
            let gv = to_ncr(g);
            let mut dgamma = Array1::<F>::zeros(c);
            let mut dbeta = Array1::<F>::zeros(c);
            for ((b, ch, p), &gy) in gv.indexed_iter() {
                dgamma[ch] += gy * xhat[[b, ch, p]];
                dbeta[ch] += gy;
            }
            let mut dx = Array3::<F>::zeros((n, c, r));
            for ((b, ch, p), &gy) in gv.indexed_iter() {
                // dxhat = gy * gamma; sums of dxhat and dxhat*xhat follow from dbeta/dgamma
                let dxhat = gy * gm[ch];
                let sum_dxhat = dbeta[ch] * gm[ch];
                let sum_dxhat_xhat = dgamma[ch] * gm[ch];
                dx[[b, ch, p]] = inv_std[ch] / m
                    * (m * dxhat - sum_dxhat - xhat[[b, ch, p]] * sum_dxhat_xhat);
            }
            vec![
                Some(dx.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap()),
                Some(dgamma.into_dyn()),
                Some(dbeta.into_dyn()),
            ]
        });
        (out, BatchStats { mean, var })
    }

    /// Normalises with fixed statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: Var<'g, F>,
        beta: Var<'g, F>,
        mean: &Tensor<F>,
        var: &Tensor<F>,
        eps: F,
    ) -> Var<'g, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let v = to_ncr(&x);
        let (n, c, r) = v.dim();
        let inv_std: Array1<F> = var.iter().map(|&s| F::one() / (s + eps).sqrt()).collect();
        let mean: Array1<F> = mean.iter().copied().collect();
        let (gm, bt) = (gamma.value(), beta.value());
        let mut xhat = Array3::<F>::zeros((n, c, r));
        let mut y = Array3::<F>::zeros((n, c, r));
        for ((b, ch, p), &e) in v.indexed_iter() {
            let h = (e - mean[ch]) * inv_std[ch];
            xhat[[b, ch, p]] = h;
            y[[b, ch, p]] = gm[ch] * h + bt[ch];
        }
        let y = y.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap();
        self.graph.op(y, &[*self, gamma, beta], move |g| {
            let gv = to_ncr(g);
            let mut dgamma = Array1::<F>::zeros(c);
            let mut dbeta = Array1::<F>::zeros(c);
            let mut dx = Array3::<F>::zeros((n, c, r));
            for ((b, ch, p), &gy) in gv.indexed_iter() {
                dgamma[ch] += gy * xhat[[b, ch, p]];
                dbeta[ch] += gy;
                dx[[b, ch, p]] = gy * gm[ch] * inv_std[ch];
            }
            vec![
                Some(dx.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap()),
                Some(dgamma.into_dyn()),
                Some(dbeta.into_dyn()),
            ]
        })
    }
}

pub(crate) fn zeros_like_channels<F: Real>(c: usize) -> ArrayD<F> {
    ArrayD::zeros(IxDyn(&[c]))
}
