//! Central finite differences, used as the independent reference for
//! every analytic gradient in the crate's tests.

use super::graph::Tensor;
use super::Real;

/// Central-difference gradient of the scalar function `f` at `x`.
pub fn numeric_gradient<F, Fun>(x: &Tensor<F>, step: F, mut f: Fun) -> Tensor<F>
where
    F: Real,
    Fun: FnMut(&Tensor<F>) -> F,
{
    let mut probe = x.clone();
    let mut grad = Tensor::<F>::zeros(x.raw_dim());
    let two = F::one() + F::one();
    for i in 0..x.len() {
        let orig = probe.as_slice_memory_order().unwrap()[i];
        probe.as_slice_memory_order_mut().unwrap()[i] = orig + step;
        let up = f(&probe);
        probe.as_slice_memory_order_mut().unwrap()[i] = orig - step;
        let down = f(&probe);
        probe.as_slice_memory_order_mut().unwrap()[i] = orig;
        grad.as_slice_memory_order_mut().unwrap()[i] = (up - down) / (two * step);
    }
    grad
}

/// Central differences at selected flat (memory-order) coordinates only.
pub fn numeric_gradient_at<F, Fun>(x: &Tensor<F>, coords: &[usize], step: F, mut f: Fun) -> Vec<F>
where
    F: Real,
    Fun: FnMut(&Tensor<F>) -> F,
{
    let mut probe = x.clone();
    let two = F::one() + F::one();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.as_slice_memory_order().unwrap()[i];
            probe.as_slice_memory_order_mut().unwrap()[i] = orig + step;
            let up = f(&probe);
            probe.as_slice_memory_order_mut().unwrap()[i] = orig - step;
            let down = f(&probe);
            probe.as_slice_memory_order_mut().unwrap()[i] = orig;
            (up - down) / (two * step)
        })
        .collect()
}

/// Relative error of paired values, maximised.
pub fn max_relative_error_pairs(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Elementwise relative error `|a-b| / max(|a|, |b|, floor)`, maximised.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Default absolute floor for [`max_relative_error`] denominators.
pub const GRAD_FLOOR: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use ndarray::{ArrayD, IxDyn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::nn::layers::{BatchNorm, Conv2d, ConvTranspose2d, GruCell, Linear};
    use crate::nn::{concat_channels, Bound, Graph, Mode, ParamSet, Var, Window};

    fn randn(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        ArrayD::from_shape_simple_fn(IxDyn(shape), || d.sample(&mut rng))
    }

    /// Checks d(sum(f(x) * weights))/dx against finite differences.
    fn check_unary(shape: &[usize], seed: u64, f: impl for<'g> Fn(Var<'g, f64>) -> Var<'g, f64>) {
        let x0 = randn(shape, seed);
        let loss = |x: &ArrayD<f64>| -> (f64, ArrayD<f64>) {
            let g = Graph::new();
            let xv = g.leaf(x.clone());
            let y = f(xv);
            let w = g.constant(randn(&y.shape(), seed + 1000));
            let l = y.mul(w).sum_all();
            let grads = g.backward(l);
            (l.scalar(), grads.get_or_zeros(xv))
        };
        let (_, analytic) = loss(&x0);
        let numeric = numeric_gradient(&x0, 1e-5, |x| loss(x).0);
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn elementwise_ops() {
        check_unary(&[3, 4], 1, |x| x.tanh());
        check_unary(&[3, 4], 2, |x| x.sigmoid());
        check_unary(&[3, 4], 3, |x| x.scale(2.5).add_scalar(0.3));
        check_unary(&[3, 4], 4, |x| x.mul(x).add(x));
        check_unary(&[3, 4], 5, |x| x.sigmoid().log_clamped(1e-7, 1.0 - 1e-7));
        check_unary(&[2, 3, 2, 2], 6, |x| x.softmax_channels());
        check_unary(&[2, 3], 7, |x| x.tile_spatial(2, 3));
        check_unary(&[1, 2, 2, 3], 8, |x| x.upsample_nearest(2));
        check_unary(&[2, 3, 2], 9, |x| x.reshape(&[3, 4]).sub(x.reshape(&[3, 4]).scale(0.5)));
        check_unary(&[2, 2, 3], 10, |x| concat_channels(&[x, x.tanh()]));
        check_unary(&[3, 5], 11, |x| x.matmul(x.graph().constant(randn(&[5, 2], 77))));
        check_unary(&[5, 2], 13, |x| x.graph().constant(randn(&[3, 5], 78)).matmul(x));
        check_unary(&[3, 4], 12, |x| x.blend_rows(x.tanh(), &[1.0, 0.0, 1.0]));
    }

    fn check_layer(
        input_shape: &[usize],
        seed: u64,
        init: impl Fn(&mut ParamSet<f64>, &mut ParamSet<f64>, &mut ChaCha8Rng),
        fwd: impl for<'g> Fn(&Bound<'g, f64>, Var<'g, f64>) -> Var<'g, f64>,
        mode: Mode,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let mut bufs = ParamSet::new();
        init(&mut ps, &mut bufs, &mut rng);
        // scale weights up so the signal is not dominated by the tiny init
        for (_, t) in ps.iter_mut() {
            t.mapv_inplace(|v| v * 10.0);
        }
        let x0 = randn(input_shape, seed + 7);
        let run = |ps: &ParamSet<f64>, x: &ArrayD<f64>| -> (f64, ParamSet<f64>, ArrayD<f64>) {
            let g = Graph::new();
            let b = Bound::new(&g, ps, &bufs, mode, true);
            let xv = g.leaf(x.clone());
            let y = fwd(&b, xv);
            let w = g.constant(randn(&y.shape(), seed + 99));
            let l = y.mul(w).sum_all();
            let grads = g.backward(l);
            (l.scalar(), b.gradients(&grads), grads.get_or_zeros(xv))
        };
        let (_, pgrads, xgrad) = run(&ps, &x0);
        let numeric = numeric_gradient(&x0, 1e-5, |x| run(&ps, x).0);
        let err = max_relative_error(&xgrad, &numeric, 1e-6);
        assert!(err < 1e-4, "input gradient relative error {err}");
        for name in ps.names().cloned().collect::<Vec<_>>() {
            let p0 = ps.get(&name).unwrap().clone();
            let numeric = numeric_gradient(&p0, 1e-5, |p| {
                let mut q = ps.clone();
                q.insert(name.clone(), p.clone());
                run(&q, &x0).0
            });
            let err = max_relative_error(pgrads.get(&name).unwrap(), &numeric, 1e-6);
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }

    #[test]
    fn conv_layers() {
        for (k, s, p) in [(3, 1, 1), (4, 2, 1), (3, 2, 0)] {
            let conv = Conv2d::new("c", 2, 3, Window::new(k, s, p), true);
            check_layer(
                &[2, 2, 6, 5],
                k as u64,
                |ps, _, rng| conv.init(ps, rng),
                |b, x| conv.forward(b, x),
                Mode::Train,
            );
            let deconv = ConvTranspose2d::new("d", 2, 3, Window::new(k, s, p), true);
            check_layer(
                &[2, 2, 4, 3],
                10 + k as u64,
                |ps, _, rng| deconv.init(ps, rng),
                |b, x| deconv.forward(b, x),
                Mode::Train,
            );
        }
    }

    #[test]
    fn batch_norm_both_modes() {
        let bn = BatchNorm::new("bn", 3);
        for mode in [Mode::Train, Mode::Eval] {
            check_layer(
                &[4, 3, 2, 2],
                21,
                |ps, bufs, rng| bn.init(ps, bufs, rng),
                |b, x| bn.forward(b, x),
                mode,
            );
            check_layer(
                &[5, 3],
                22,
                |ps, bufs, rng| bn.init(ps, bufs, rng),
                |b, x| bn.forward(b, x),
                mode,
            );
        }
    }

    #[test]
    fn linear_and_gru() {
        let lin = Linear::new("l", 4, 3);
        check_layer(&[2, 4], 31, |ps, _, rng| lin.init(ps, rng), |b, x| lin.forward(b, x), Mode::Train);
        let gru = GruCell::new("g", 3, 3);
        check_layer(
            &[2, 3],
            32,
            |ps, _, rng| gru.init(ps, rng),
            |b, x| {
                let h = gru.forward(b, x, x.tanh());
                gru.forward(b, x.scale(-1.0), h)
            },
            Mode::Train,
        );
    }

    #[test]
    fn deconv_inverts_conv_geometry() {
        let win = Window::new(4, 2, 1);
        for h in [4, 8, 16] {
            assert_eq!(win.conv_out(win.deconv_out(h)), h);
            assert_eq!(win.deconv_out(h), 2 * h);
        }
    }

    #[test]
    fn conv_matches_direct_loop() {
        let x = randn(&[1, 2, 5, 5], 40);
        let w = randn(&[3, 2, 3, 3], 41);
        let g = Graph::new();
        let y = g
            .constant(x.clone())
            .conv2d(g.constant(w.clone()), Window::new(3, 2, 1));
        let y = y.value();
        assert_eq!(y.shape(), &[1, 3, 3, 3]);
        for o in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let (yy, xx) = ((i * 2 + ki) as isize - 1, (j * 2 + kj) as isize - 1);
                                if (0..5).contains(&yy) && (0..5).contains(&xx) {
                                    acc += x[[0, c, yy as usize, xx as usize]] * w[[o, c, ki, kj]];
                                }
                            }
                        }
                    }
                    assert!((acc - y[[0, o, i, j]]).abs() < 1e-12);
                }
            }
        }
    }
}
