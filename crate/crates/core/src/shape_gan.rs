//! Stage one: a segmentation map generated from noise, the merged body
//! layout and the design coding, with a per-pixel softmax head.

use ndarray::{Array1, ArrayD};
use rand::Rng;

use crate::nets::{Arch, CondProjector, Decoder, Discriminator, Weights};
use crate::nn::layers::{BatchNorm, Conv2d};
use crate::nn::{concat_channels, Bound, Graph, Mode, Real, Var, Window};
use crate::tensor::{stack_hwc, stack_rows, unstack_hwc};
use crate::types::{
    DesignCoding, LatentNoise, SegMap, SpatialConstraint, NUM_LABELS, NUM_MERGED_LABELS,
};

#[derive(Debug, Clone)]
pub struct ShapeGenerator {
    pub arch: Arch,
    pub proj: CondProjector,
    pub constraint_conv: Conv2d,
    pub constraint_norm: BatchNorm,
    pub decoder: Decoder,
}

impl ShapeGenerator {
    pub fn new(arch: Arch) -> Self {
        let w = arch.width;
        let pc = arch.proj_channels();
        ShapeGenerator {
            arch,
            proj: CondProjector::new("gen", pc),
            constraint_conv: Conv2d::new("gen.cenc", NUM_MERGED_LABELS, w, Window::new(3, 1, 1), false),
            constraint_norm: BatchNorm::new("gen.cenc_bn", w),
            decoder: Decoder::new("gen", arch, NUM_MERGED_LABELS + w + pc, NUM_LABELS),
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Weights<F> {
        let mut w = Weights::default();
        self.proj.init(&mut w, rng);
        self.constraint_conv.init(&mut w.params, rng);
        self.constraint_norm.init(&mut w.params, &mut w.buffers, rng);
        self.decoder.init(&mut w, rng);
        w
    }

    pub fn head_names(&self) -> Vec<String> {
        self.decoder.head_names()
    }

    /// Pre-softmax logits `[N, 7, m, m]`.
    pub fn logits<'g, F: Real>(
        &self,
        b: &Bound<'g, F>,
        z: Var<'g, F>,
        constraint: Var<'g, F>,
        design: Var<'g, F>,
    ) -> Var<'g, F> {
        let projected = self.proj.forward(b, z, design);
        let encoded = self
            .constraint_norm
            .forward(b, self.constraint_conv.forward(b, constraint))
            .relu();
        self.decoder
            .forward(b, concat_channels(&[constraint, encoded, projected]))
    }

    /// Per-pixel class distributions `[N, 7, m, m]`.
    pub fn forward<'g, F: Real>(
        &self,
        b: &Bound<'g, F>,
        z: Var<'g, F>,
        constraint: Var<'g, F>,
        design: Var<'g, F>,
    ) -> Var<'g, F> {
        self.logits(b, z, constraint, design).softmax_channels()
    }
}

/// Sees the map stacked with the nearest-upsampled constraint.
#[derive(Debug, Clone)]
pub struct ShapeDiscriminator {
    pub arch: Arch,
    pub net: Discriminator,
}

impl ShapeDiscriminator {
    pub fn new(arch: Arch) -> Self {
        ShapeDiscriminator {
            arch,
            net: Discriminator::new("disc", arch, NUM_LABELS + NUM_MERGED_LABELS),
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Weights<F> {
        let mut w = Weights::default();
        self.net.init(&mut w, rng);
        w
    }

    pub fn head_names(&self) -> Vec<String> {
        self.net.head_names()
    }

    pub fn forward<'g, F: Real>(
        &self,
        b: &Bound<'g, F>,
        map: Var<'g, F>,
        constraint: Var<'g, F>,
        design: Var<'g, F>,
    ) -> Var<'g, F> {
        let up = constraint.upsample_nearest(self.arch.grid_factor());
        self.net.forward(b, concat_channels(&[map, up]), design)
    }
}

pub(crate) fn noise_rows<F: Real>(zs: &[&LatentNoise]) -> ArrayD<F> {
    let rows: Vec<&Array1<f32>> = zs.iter().map(|z| z.values()).collect();
    stack_rows(&rows)
}

pub(crate) fn design_rows<F: Real>(ds: &[&DesignCoding]) -> ArrayD<F> {
    let rows: Vec<&Array1<f32>> = ds.iter().map(|d| d.values()).collect();
    stack_rows(&rows)
}

pub(crate) fn constraint_batch<F: Real>(cs: &[&SpatialConstraint]) -> ArrayD<F> {
    let arrays: Vec<_> = cs.iter().map(|c| c.probs()).collect();
    stack_hwc(&arrays)
}

/// Generates one segmentation map in inference mode.
pub fn generate_shape(
    z: &LatentNoise,
    constraint: &SpatialConstraint,
    design: &DesignCoding,
    net: &ShapeGenerator,
    weights: &Weights<f32>,
) -> SegMap {
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &weights.params, &weights.buffers, Mode::Eval, false);
    let out = net.forward(
        &b,
        g.constant(noise_rows(&[z])),
        g.constant(constraint_batch(&[constraint])),
        g.constant(design_rows(&[design])),
    );
    SegMap::new(unstack_hwc(&out.value(), 0)).expect("softmax output lies on the simplex")
}

/// Probability that `(map, constraint, design)` is a real training tuple.
pub fn discriminate_shape(
    map: &SegMap,
    constraint: &SpatialConstraint,
    design: &DesignCoding,
    net: &ShapeDiscriminator,
    weights: &Weights<f32>,
) -> f32 {
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &weights.params, &weights.buffers, Mode::Eval, false);
    let p = net.forward(
        &b,
        g.constant(stack_hwc(&[map.probs()])),
        g.constant(constraint_batch(&[constraint])),
        g.constant(design_rows(&[design])),
    );
    p.scalar()
}

/// `[N, 7, m, m]` one-hot tensor of a batch of maps.
pub fn segmap_batch<F: Real>(maps: &[&SegMap]) -> ArrayD<F> {
    let arrays: Vec<_> = maps.iter().map(|m| m.probs()).collect();
    stack_hwc(&arrays)
}

#[cfg(test)]
mod tests {
    use ndarray::{Array1, Array3, Axis, IxDyn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::gradcheck::{max_relative_error_pairs, numeric_gradient_at};
    use crate::types::DESIGN_DIM;

    fn arch() -> Arch {
        Arch::new(32, 4).unwrap()
    }

    fn random_inputs(seed: u64) -> (LatentNoise, SpatialConstraint, DesignCoding) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Array3::from_shape_simple_fn((8, 8, 4), || rng.random::<f32>() + 0.01);
        for mut lane in c.lanes_mut(Axis(2)) {
            let s: f32 = lane.sum();
            lane.mapv_inplace(|v| v / s);
        }
        let d: Array1<f32> = (0..DESIGN_DIM)
            .map(|i| if i < 4 { (rng.random::<bool>()) as u8 as f32 } else { rng.random::<f32>() })
            .collect();
        (
            LatentNoise::sample(seed),
            SpatialConstraint::new(c).unwrap(),
            DesignCoding::new(d).unwrap(),
        )
    }

    #[test]
    fn output_is_simplex_and_deterministic() {
        let net = ShapeGenerator::new(arch());
        let w = net.init::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0));
        let (z, c, d) = random_inputs(1);
        let a = generate_shape(&z, &c, &d, &net, &w);
        assert_eq!(a.probs().dim(), (32, 32, 7));
        for lane in a.probs().lanes(Axis(2)) {
            assert!((lane.sum() - 1.0).abs() < 1e-5);
        }
        let b = generate_shape(&z, &c, &d, &net, &w);
        assert_eq!(a, b);
    }

    #[test]
    fn zeroed_head_gives_uniform_map() {
        let net = ShapeGenerator::new(arch());
        let mut w = net.init::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0));
        w.zero(&net.head_names());
        let (z, c, d) = random_inputs(2);
        let map = generate_shape(&z, &c, &d, &net, &w);
        assert!(map.probs().iter().all(|&p| (p - 1.0 / 7.0).abs() < 1e-7));
    }

    #[test]
    fn discriminator_range_and_zero_head() {
        let gen = ShapeGenerator::new(arch());
        let gw = gen.init::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0));
        let disc = ShapeDiscriminator::new(arch());
        let mut dw = disc.init::<f32, _>(&mut ChaCha8Rng::seed_from_u64(1));
        for seed in 0..100 {
            let (z, c, d) = random_inputs(seed);
            let map = generate_shape(&z, &c, &d, &gen, &gw);
            let p = discriminate_shape(&map, &c, &d, &disc, &dw);
            assert!(p > 0.0 && p < 1.0);
        }
        dw.zero(&disc.head_names());
        let (z, c, d) = random_inputs(7);
        let map = generate_shape(&z, &c, &d, &gen, &gw);
        assert_eq!(discriminate_shape(&map, &c, &d, &disc, &dw), 0.5);
    }

    #[test]
    fn discriminator_input_gradient() {
        let disc = ShapeDiscriminator::new(Arch::new(32, 2).unwrap());
        let w = disc.init::<f64, _>(&mut ChaCha8Rng::seed_from_u64(3)).cast::<f64>();
        let (_, c, d) = random_inputs(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map: ArrayD<f64> = ArrayD::from_shape_simple_fn(IxDyn(&[1, 7, 32, 32]), || rng.random::<f64>());
        let cons = constraint_batch::<f64>(&[&c]);
        let des = design_rows::<f64>(&[&d]);
        let run = |x: &ArrayD<f64>| {
            let g = Graph::<f64>::new();
            let b = Bound::new(&g, &w.params, &w.buffers, Mode::Eval, false);
            let xv = g.leaf(x.clone());
            let p = disc.forward(&b, xv, g.constant(cons.clone()), g.constant(des.clone()));
            let grads = g.backward(p);
            (p.scalar(), grads.get_or_zeros(xv))
        };
        let (_, analytic) = run(&map);
        let coords: Vec<usize> = (0..64).map(|_| rng.random_range(0..map.len())).collect();
        let numeric = numeric_gradient_at(&map, &coords, 1e-3, |x| run(x).0);
        let flat = analytic.as_slice_memory_order().unwrap();
        let picked: Vec<f64> = coords.iter().map(|&i| flat[i]).collect();
        let err = max_relative_error_pairs(&picked, &numeric, 1e-6);
        assert!(err < 1e-3, "relative error {err}");
    }
}
