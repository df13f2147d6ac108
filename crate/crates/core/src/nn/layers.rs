//! Parameterised building blocks. Each layer owns a name prefix and knows
//! how to initialise and bind its own entries of a [`ParamSet`].

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::conv::Window;
use super::graph::Var;
use super::norm::zeros_like_channels;
use super::ops::embedding;
use super::params::{Bound, Mode, ParamSet};
use super::Real;

fn normal<F: Real, R: Rng + ?Sized>(shape: &[usize], mean: f64, std: f64, rng: &mut R) -> ArrayD<F> {
    let dist = Normal::new(mean, std).unwrap();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || F::from(dist.sample(rng)).unwrap())
}

fn uniform<F: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> ArrayD<F> {
    let dist = Uniform::new_inclusive(-bound, bound).unwrap();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || F::from(dist.sample(rng)).unwrap())
}

/// DCGAN-style weight scale.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub window: Window,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, window: Window, bias: bool) -> Self {
        Conv2d {
            name: name.into(),
            cin,
            cout,
            window,
            bias,
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<F>, rng: &mut R) {
        let k = self.window.kernel;
        ps.insert(
            format!("{}.weight", self.name),
            normal(&[self.cout, self.cin, k, k], 0.0, INIT_STD, rng),
        );
        if self.bias {
            ps.insert(format!("{}.bias", self.name), zeros_like_channels(self.cout));
        }
    }

    pub fn num_params(&self) -> usize {
        let k = self.window.kernel;
        self.cout * self.cin * k * k + if self.bias { self.cout } else { 0 }
    }

    pub fn forward<'g, F: Real>(&self, b: &Bound<'g, F>, x: Var<'g, F>) -> Var<'g, F> {
        let y = x.conv2d(b.param(&format!("{}.weight", self.name)), self.window);
        if self.bias {
            y.add_bias(b.param(&format!("{}.bias", self.name)))
        } else {
            y
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub window: Window,
    pub bias: bool,
}

impl ConvTranspose2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, window: Window, bias: bool) -> Self {
        ConvTranspose2d {
            name: name.into(),
            cin,
            cout,
            window,
            bias,
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<F>, rng: &mut R) {
        let k = self.window.kernel;
        ps.insert(
            format!("{}.weight", self.name),
            normal(&[self.cin, self.cout, k, k], 0.0, INIT_STD, rng),
        );
        if self.bias {
            ps.insert(format!("{}.bias", self.name), zeros_like_channels(self.cout));
        }
    }

    pub fn num_params(&self) -> usize {
        let k = self.window.kernel;
        self.cout * self.cin * k * k + if self.bias { self.cout } else { 0 }
    }

    pub fn forward<'g, F: Real>(&self, b: &Bound<'g, F>, x: Var<'g, F>) -> Var<'g, F> {
        let y = x.conv_transpose2d(b.param(&format!("{}.weight", self.name)), self.window);
        if self.bias {
            y.add_bias(b.param(&format!("{}.bias", self.name)))
        } else {
            y
        }
    }
}

/// `y = x W + b` with `W[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Linear {
            name: name.into(),
            input,
            output,
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<F>, rng: &mut R) {
        ps.insert(
            format!("{}.weight", self.name),
            normal(&[self.input, self.output], 0.0, INIT_STD, rng),
        );
        ps.insert(format!("{}.bias", self.name), zeros_like_channels(self.output));
    }

    /// Uniform `±1/sqrt(input)` weights, as recurrent models usually start.
    pub fn init_fan_in<F: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<F>, rng: &mut R) {
        let bound = 1.0 / (self.input as f64).sqrt();
        ps.insert(
            format!("{}.weight", self.name),
            uniform(&[self.input, self.output], bound, rng),
        );
        ps.insert(format!("{}.bias", self.name), zeros_like_channels(self.output));
    }

    pub fn num_params(&self) -> usize {
        self.input * self.output + self.output
    }

    pub fn forward<'g, F: Real>(&self, b: &Bound<'g, F>, x: Var<'g, F>) -> Var<'g, F> {
        x.matmul(b.param(&format!("{}.weight", self.name)))
            .add_bias(b.param(&format!("{}.bias", self.name)))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm {
            name: name.into(),
            channels,
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(
        &self,
        ps: &mut ParamSet<F>,
        buffers: &mut ParamSet<F>,
        rng: &mut R,
    ) {
        ps.insert(
            format!("{}.gamma", self.name),
            normal(&[self.channels], 1.0, INIT_STD, rng),
        );
        ps.insert(format!("{}.beta", self.name), zeros_like_channels(self.channels));
        buffers.insert(
            format!("{}.running_mean", self.name),
            zeros_like_channels(self.channels),
        );
        buffers.insert(
            format!("{}.running_var", self.name),
            ArrayD::from_elem(IxDyn(&[self.channels]), F::one()),
        );
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }

    pub fn forward<'g, F: Real>(&self, b: &Bound<'g, F>, x: Var<'g, F>) -> Var<'g, F> {
        let gamma = b.param(&format!("{}.gamma", self.name));
        let beta = b.param(&format!("{}.beta", self.name));
        let eps = F::from(Self::EPS).unwrap();
        let mean_key = format!("{}.running_mean", self.name);
        let var_key = format!("{}.running_var", self.name);
        match b.mode() {
            Mode::Train => {
                let (y, stats) = x.batch_norm_train(gamma, beta, eps);
                let mom = F::from(Self::MOMENTUM).unwrap();
                let keep = F::one() - mom;
                let rm = b.buffer(&mean_key);
                let rv = b.buffer(&var_key);
                let n = F::from(x.value().len() / self.channels).unwrap();
                let unbias = if n > F::one() { n / (n - F::one()) } else { F::one() };
                let new_mean = ndarray::Zip::from(&rm)
                    .and(&stats.mean.view().into_dyn())
                    .map_collect(|&r, &s| keep * r + mom * s);
                let new_var = ndarray::Zip::from(&rv)
                    .and(&stats.var.view().into_dyn())
                    .map_collect(|&r, &s| keep * r + mom * s * unbias);
                b.set_buffer(&mean_key, new_mean);
                b.set_buffer(&var_key, new_var);
                y
            }
            Mode::Eval => x.batch_norm_eval(gamma, beta, &b.buffer(&mean_key), &b.buffer(&var_key), eps),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub name: String,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(name: impl Into<String>, vocab: usize, dim: usize) -> Self {
        Embedding {
            name: name.into(),
            vocab,
            dim,
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<F>, rng: &mut R) {
        ps.insert(
            format!("{}.table", self.name),
            normal(&[self.vocab, self.dim], 0.0, 1.0, rng),
        );
    }

    pub fn forward<'g, F: Real>(&self, b: &Bound<'g, F>, ids: &[usize]) -> Var<'g, F> {
        embedding(b.param(&format!("{}.table", self.name)), ids)
    }
}

/// Gated recurrent unit cell over `[N, input] × [N, hidden]`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

const GATES: [&str; 3] = ["reset", "update", "cand"];

impl GruCell {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        GruCell {
            name: name.into(),
            input,
            hidden,
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, ps: &mut ParamSet<F>, rng: &mut R) {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        for gate in GATES {
            ps.insert(
                format!("{}.{gate}.w_in", self.name),
                uniform(&[self.input, self.hidden], bound, rng),
            );
            ps.insert(
                format!("{}.{gate}.w_hid", self.name),
                uniform(&[self.hidden, self.hidden], bound, rng),
            );
            ps.insert(
                format!("{}.{gate}.b_in", self.name),
                uniform(&[self.hidden], bound, rng),
            );
            ps.insert(
                format!("{}.{gate}.b_hid", self.name),
                uniform(&[self.hidden], bound, rng),
            );
        }
    }

    pub fn forward<'g, F: Real>(&self, b: &Bound<'g, F>, x: Var<'g, F>, h: Var<'g, F>) -> Var<'g, F> {
        let p = |gate: &str, what: &str| b.param(&format!("{}.{gate}.{what}", self.name));
        let from_input = |gate: &str| x.matmul(p(gate, "w_in")).add_bias(p(gate, "b_in"));
        let from_hidden = |gate: &str| h.matmul(p(gate, "w_hid")).add_bias(p(gate, "b_hid"));
        let reset = from_input("reset").add(from_hidden("reset")).sigmoid();
        let update = from_input("update").add(from_hidden("update")).sigmoid();
        let cand = from_input("cand")
            .add(reset.mul(from_hidden("cand")))
            .tanh();
        update.one_minus().mul(cand).add(update.mul(h))
    }
}
