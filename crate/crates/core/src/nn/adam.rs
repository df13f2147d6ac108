use super::params::ParamSet;
use super::Real;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F: Real> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub step: u64,
    pub first_moment: ParamSet<F>,
    pub second_moment: ParamSet<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &ParamSet<F>, lr: F, beta1: F, beta2: F) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: F::from(1e-8).unwrap(),
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }

    /// Applies one update. Every parameter must have a gradient entry.
    pub fn update(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .unwrap_or_else(|| panic!("no gradient for `{name}`"));
            let m = self.first_moment.get_mut(name).expect("moment shape");
            let v = self.second_moment.get_mut(name).expect("moment shape");
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (F::one() - b1) * g;
                    *v = b2 * *v + (F::one() - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
