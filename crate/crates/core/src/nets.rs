//! Building blocks shared by the generators and discriminators.
//!
//! Every generator decodes an `8 × 8` feature map to the output
//! resolution with six transposed convolutions; every discriminator is a
//! six-layer convolution stack that sees the design coding tiled over its
//! `8 × 8` feature map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm, Conv2d, ConvTranspose2d, Linear};
use crate::nn::{concat_channels, Bound, ParamSet, Real, Var, Window};
use crate::types::{CONSTRAINT_SIZE, DESIGN_DIM, NOISE_DIM};

pub const GENERATOR_LAYERS: usize = 6;
pub const DISCRIMINATOR_LAYERS: usize = 6;
pub const LEAK: f64 = 0.2;

/// Resolution and base channel width shared by all networks of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub resolution: usize,
    pub width: usize,
}

impl Arch {
    pub const RESOLUTIONS: [usize; 3] = [32, 64, 128];

    pub fn new(resolution: usize, width: usize) -> Result<Self> {
        if !Self::RESOLUTIONS.contains(&resolution) {
            return Err(Error::InvalidConfig(format!(
                "resolution {resolution} not in {:?}",
                Self::RESOLUTIONS
            )));
        }
        if width == 0 {
            return Err(Error::InvalidConfig("width must be positive".into()));
        }
        Ok(Arch { resolution, width })
    }

    /// Number of 2× upsampling steps from the `8 × 8` grid.
    pub fn ups(&self) -> usize {
        (self.resolution / CONSTRAINT_SIZE).trailing_zeros() as usize
    }

    /// Channels of the spatial projection of `(z ‖ d)`.
    pub fn proj_channels(&self) -> usize {
        2 * self.width
    }

    /// Nearest-neighbour factor from the `8 × 8` grid to full resolution.
    pub fn grid_factor(&self) -> usize {
        self.resolution / CONSTRAINT_SIZE
    }
}

/// Weights plus non-trainable running statistics of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Weights<F: Real> {
    pub params: ParamSet<F>,
    pub buffers: ParamSet<F>,
}

impl<F: Real> Weights<F> {
    pub fn cast<G: Real>(&self) -> Weights<G> {
        Weights {
            params: self.params.cast(),
            buffers: self.buffers.cast(),
        }
    }

    /// Zeroes the named parameters (used to probe network heads).
    pub fn zero(&mut self, names: &[String]) {
        for n in names {
            if let Some(t) = self.params.get_mut(n) {
                t.fill(F::zero());
            }
        }
    }
}

/// Linear map of `(z ‖ d)` onto a `[N, C, 8, 8]` grid, normalised and rectified.
#[derive(Debug, Clone)]
pub struct CondProjector {
    pub linear: Linear,
    pub norm: BatchNorm,
    pub channels: usize,
}

impl CondProjector {
    pub fn new(prefix: &str, channels: usize) -> Self {
        let out = channels * CONSTRAINT_SIZE * CONSTRAINT_SIZE;
        CondProjector {
            linear: Linear::new(format!("{prefix}.proj"), NOISE_DIM + DESIGN_DIM, out),
            norm: BatchNorm::new(format!("{prefix}.proj_bn"), out),
            channels,
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, w: &mut Weights<F>, rng: &mut R) {
        self.linear.init(&mut w.params, rng);
        self.norm.init(&mut w.params, &mut w.buffers, rng);
    }

    pub fn num_params(&self) -> usize {
        self.linear.num_params() + self.norm.num_params()
    }

    pub fn forward<'g, F: Real>(&self, b: &Bound<'g, F>, z: Var<'g, F>, d: Var<'g, F>) -> Var<'g, F> {
        let n = z.shape()[0];
        let zd = concat_channels(&[z, d]);
        let h = self.norm.forward(b, self.linear.forward(b, zd)).relu();
        h.reshape(&[n, self.channels, CONSTRAINT_SIZE, CONSTRAINT_SIZE])
    }
}

/// Six transposed convolutions from `8 × 8` to full resolution. The last
/// `ups` layers before the head double the resolution; the rest keep it.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<ConvTranspose2d>,
    pub norms: Vec<BatchNorm>,
}

impl Decoder {
    pub fn new(prefix: &str, arch: Arch, cin: usize, cout: usize) -> Self {
        let w = arch.width;
        let widths = [8 * w, 8 * w, 4 * w, 2 * w, w, cout];
        let first_up = GENERATOR_LAYERS - 1 - arch.ups();
        let mut layers = Vec::with_capacity(GENERATOR_LAYERS);
        let mut norms = Vec::with_capacity(GENERATOR_LAYERS - 1);
        let mut c = cin;
        for (i, &out) in widths.iter().enumerate() {
            let up = i >= first_up && i < GENERATOR_LAYERS - 1;
            let window = if up {
                Window::new(4, 2, 1)
            } else {
                Window::new(3, 1, 1)
            };
            let last = i == GENERATOR_LAYERS - 1;
            layers.push(ConvTranspose2d::new(format!("{prefix}.dec{i}"), c, out, window, last));
            if !last {
                norms.push(BatchNorm::new(format!("{prefix}.dec{i}_bn"), out));
            }
            c = out;
        }
        Decoder { layers, norms }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, w: &mut Weights<F>, rng: &mut R) {
        for l in &self.layers {
            l.init(&mut w.params, rng);
        }
        for n in &self.norms {
            n.init(&mut w.params, &mut w.buffers, rng);
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum::<usize>()
            + self.norms.iter().map(|n| n.num_params()).sum::<usize>()
    }

    /// Parameter names of the output layer.
    pub fn head_names(&self) -> Vec<String> {
        let name = &self.layers.last().unwrap().name;
        vec![format!("{name}.weight"), format!("{name}.bias")]
    }

    /// Pre-activation output of the last layer.
    pub fn forward<'g, F: Real>(&self, b: &Bound<'g, F>, x: Var<'g, F>) -> Var<'g, F> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(b, h);
            if let Some(norm) = self.norms.get(i) {
                h = norm.forward(b, h).relu();
            }
        }
        h
    }
}

/// Strided convolutions from full resolution down to `8 × 8`.
#[derive(Debug, Clone)]
pub struct DownEncoder {
    pub layers: Vec<Conv2d>,
    pub norms: Vec<BatchNorm>,
}

impl DownEncoder {
    pub fn new(prefix: &str, arch: Arch, cin: usize) -> Self {
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let mut c = cin;
        for i in 0..arch.ups() {
            let out = arch.width << i.min(2);
            layers.push(Conv2d::new(format!("{prefix}.down{i}"), c, out, Window::new(4, 2, 1), false));
            norms.push(BatchNorm::new(format!("{prefix}.down{i}_bn"), out));
            c = out;
        }
        DownEncoder { layers, norms }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.cout)
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, w: &mut Weights<F>, rng: &mut R) {
        for l in &self.layers {
            l.init(&mut w.params, rng);
        }
        for n in &self.norms {
            n.init(&mut w.params, &mut w.buffers, rng);
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum::<usize>()
            + self.norms.iter().map(|n| n.num_params()).sum::<usize>()
    }

    pub fn forward<'g, F: Real>(&self, b: &Bound<'g, F>, x: Var<'g, F>) -> Var<'g, F> {
        let mut h = x;
        for (l, n) in self.layers.iter().zip(&self.norms) {
            h = n.forward(b, l.forward(b, h)).relu();
        }
        h
    }
}

/// Conditional discriminator over a full-resolution input stack.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub down: Vec<Conv2d>,
    pub mid: Vec<Conv2d>,
    pub reduce: Conv2d,
    pub head: Conv2d,
    pub norms: Vec<BatchNorm>,
}

impl Discriminator {
    pub fn new(prefix: &str, arch: Arch, cin: usize) -> Self {
        let w = arch.width;
        let ups = arch.ups();
        assert!(ups + 2 <= DISCRIMINATOR_LAYERS, "resolution too large for the stack");
        let mut down = Vec::new();
        let mut norms = Vec::new();
        let mut c = cin;
        for i in 0..ups {
            let out = w << i.min(2);
            down.push(Conv2d::new(format!("{prefix}.down{i}"), c, out, Window::new(4, 2, 1), i == 0));
            if i > 0 {
                norms.push(BatchNorm::new(format!("{prefix}.down{i}_bn"), out));
            }
            c = out;
        }
        c += DESIGN_DIM;
        let mut mid = Vec::new();
        for i in 0..DISCRIMINATOR_LAYERS - ups - 2 {
            mid.push(Conv2d::new(format!("{prefix}.mid{i}"), c, 4 * w, Window::new(3, 1, 1), false));
            norms.push(BatchNorm::new(format!("{prefix}.mid{i}_bn"), 4 * w));
            c = 4 * w;
        }
        let reduce = Conv2d::new(format!("{prefix}.reduce"), c, 8 * w, Window::new(4, 2, 1), false);
        norms.push(BatchNorm::new(format!("{prefix}.reduce_bn"), 8 * w));
        let head = Conv2d::new(format!("{prefix}.head"), 8 * w, 1, Window::new(4, 1, 0), true);
        Discriminator {
            down,
            mid,
            reduce,
            head,
            norms,
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, w: &mut Weights<F>, rng: &mut R) {
        for l in self.down.iter().chain(&self.mid).chain([&self.reduce, &self.head]) {
            l.init(&mut w.params, rng);
        }
        for n in &self.norms {
            n.init(&mut w.params, &mut w.buffers, rng);
        }
    }

    pub fn num_params(&self) -> usize {
        self.down
            .iter()
            .chain(&self.mid)
            .chain([&self.reduce, &self.head])
            .map(|l| l.num_params())
            .sum::<usize>()
            + self.norms.iter().map(|n| n.num_params()).sum::<usize>()
    }

    pub fn head_names(&self) -> Vec<String> {
        vec![
            format!("{}.weight", self.head.name),
            format!("{}.bias", self.head.name),
        ]
    }

    /// Logits `[N]` for an input stack `[N, cin, m, m]` and design coding `[N, 50]`.
    pub fn logits<'g, F: Real>(&self, b: &Bound<'g, F>, x: Var<'g, F>, design: Var<'g, F>) -> Var<'g, F> {
        let slope = F::from(LEAK).unwrap();
        let mut norms = self.norms.iter();
        let mut h = x;
        for (i, l) in self.down.iter().enumerate() {
            h = l.forward(b, h);
            if i > 0 {
                h = norms.next().unwrap().forward(b, h);
            }
            h = h.leaky_relu(slope);
        }
        let s = h.shape();
        h = concat_channels(&[h, design.tile_spatial(s[2], s[3])]);
        for l in self.mid.iter().chain([&self.reduce]) {
            h = norms.next().unwrap().forward(b, l.forward(b, h)).leaky_relu(slope);
        }
        let out = self.head.forward(b, h);
        let n = out.shape()[0];
        out.reshape(&[n])
    }

    /// Probabilities `[N]`.
    pub fn forward<'g, F: Real>(&self, b: &Bound<'g, F>, x: Var<'g, F>, design: Var<'g, F>) -> Var<'g, F> {
        self.logits(b, x, design).sigmoid()
    }
}
