//! Comparison models: one-step generators conditioned directly on a
//! coarse prior, and the two-stage model without region composition.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_str, Error, Result};
use crate::image_gan::RGB;
use crate::nets::{Arch, CondProjector, Decoder, Discriminator, Weights};
use crate::nn::layers::{BatchNorm, Conv2d};
use crate::nn::{concat_channels, Bound, Graph, Mode, Real, Var, Window};
use crate::preprocess::{downsample_bicubic, merge_labels};
use crate::shape_gan::{design_rows, noise_rows};
use crate::tensor::{stack_hwc, unstack_hwc};
use crate::types::{
    DesignCoding, ImageRGB, LatentNoise, SegMap, CONSTRAINT_SIZE, NUM_LABELS, NUM_MERGED_LABELS,
};

pub use crate::image_gan::{generate_plain_image as noncomp_generate, ImageGenerator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OneStepVariant {
    /// Downsampled, unmerged seven-class map.
    #[serde(rename = "8-7")]
    Full,
    /// Downsampled, merged four-class constraint.
    #[serde(rename = "8-4")]
    Merged,
}

impl OneStepVariant {
    pub fn prior_channels(self) -> usize {
        match self {
            OneStepVariant::Full => NUM_LABELS,
            OneStepVariant::Merged => NUM_MERGED_LABELS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OneStepVariant::Full => "8-7",
            OneStepVariant::Merged => "8-4",
        }
    }

    /// The `8 × 8 × C` prior this variant sees for a given map.
    pub fn prior(self, map: &SegMap) -> Result<Array3<f32>> {
        match self {
            OneStepVariant::Full => downsample_bicubic(map.probs()),
            OneStepVariant::Merged => downsample_bicubic(&merge_labels(map)),
        }
    }

    pub fn check_prior(self, prior: &Array3<f32>) -> Result<()> {
        let want = [CONSTRAINT_SIZE, CONSTRAINT_SIZE, self.prior_channels()];
        if prior.shape() != want {
            return Err(Error::PriorShapeMismatch {
                expected: shape_str(&want),
                actual: shape_str(prior.shape()),
            });
        }
        Ok(())
    }
}

/// Image generator fed noise, a coarse prior and the design coding.
#[derive(Debug, Clone)]
pub struct OneStepGenerator {
    pub arch: Arch,
    pub variant: OneStepVariant,
    pub proj: CondProjector,
    pub prior_conv: Conv2d,
    pub prior_norm: BatchNorm,
    pub decoder: Decoder,
}

impl OneStepGenerator {
    pub fn new(arch: Arch, variant: OneStepVariant) -> Self {
        let (w, pc, c) = (arch.width, arch.proj_channels(), variant.prior_channels());
        OneStepGenerator {
            arch,
            variant,
            proj: CondProjector::new("gen", pc),
            prior_conv: Conv2d::new("gen.penc", c, w, Window::new(3, 1, 1), false),
            prior_norm: BatchNorm::new("gen.penc_bn", w),
            decoder: Decoder::new("gen", arch, c + w + pc, RGB),
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Weights<F> {
        let mut w = Weights::default();
        self.proj.init(&mut w, rng);
        self.prior_conv.init(&mut w.params, rng);
        self.prior_norm.init(&mut w.params, &mut w.buffers, rng);
        self.decoder.init(&mut w, rng);
        w
    }

    pub fn num_params(&self) -> usize {
        self.proj.num_params()
            + self.prior_conv.num_params()
            + self.prior_norm.num_params()
            + self.decoder.num_params()
    }

    pub fn forward<'g, F: Real>(
        &self,
        b: &Bound<'g, F>,
        z: Var<'g, F>,
        prior: Var<'g, F>,
        design: Var<'g, F>,
    ) -> Var<'g, F> {
        let projected = self.proj.forward(b, z, design);
        let encoded = self.prior_norm.forward(b, self.prior_conv.forward(b, prior)).relu();
        self.decoder
            .forward(b, concat_channels(&[prior, encoded, projected]))
            .tanh()
    }
}

/// Sees the image stacked with the nearest-upsampled prior.
#[derive(Debug, Clone)]
pub struct OneStepDiscriminator {
    pub arch: Arch,
    pub net: Discriminator,
}

impl OneStepDiscriminator {
    pub fn new(arch: Arch, variant: OneStepVariant) -> Self {
        OneStepDiscriminator {
            arch,
            net: Discriminator::new("disc", arch, RGB + variant.prior_channels()),
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Weights<F> {
        let mut w = Weights::default();
        self.net.init(&mut w, rng);
        w
    }

    pub fn forward<'g, F: Real>(
        &self,
        b: &Bound<'g, F>,
        image: Var<'g, F>,
        prior: Var<'g, F>,
        design: Var<'g, F>,
    ) -> Var<'g, F> {
        let up = prior.upsample_nearest(self.arch.grid_factor());
        self.net.forward(b, concat_channels(&[image, up]), design)
    }
}

pub fn one_step_generate(
    z: &LatentNoise,
    prior: &Array3<f32>,
    design: &DesignCoding,
    net: &OneStepGenerator,
    weights: &Weights<f32>,
) -> Result<ImageRGB> {
    net.variant.check_prior(prior)?;
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &weights.params, &weights.buffers, Mode::Eval, false);
    let out = net.forward(
        &b,
        g.constant(noise_rows(&[z])),
        g.constant(stack_hwc(&[prior])),
        g.constant(design_rows(&[design])),
    );
    ImageRGB::new(unstack_hwc(&out.value(), 0))
}

#[cfg(test)]
mod tests {
    use ndarray::{Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::image_gan::{compose, generate_texture_channels, ComposeMode};
    use crate::types::{DESIGN_DIM, NOISE_DIM};

    fn design() -> DesignCoding {
        DesignCoding::new(Array1::from_elem(DESIGN_DIM, 0.5).mapv(|v: f32| v.round())).unwrap()
    }

    fn map(seed: u64) -> SegMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SegMap::from_labels(&Array2::from_shape_simple_fn((32, 32), || rng.random_range(0..7u8))).unwrap()
    }

    /// Counts from layer sizes alone.
    fn expected_params(res: usize, w: usize, c: usize) -> usize {
        let ups = (res / 8).trailing_zeros() as usize;
        let proj_out = 2 * w * 64;
        let mut total = (NOISE_DIM + DESIGN_DIM) * proj_out + proj_out + 2 * proj_out;
        total += c * w * 9 + 2 * w;
        let widths = [8 * w, 8 * w, 4 * w, 2 * w, w, 3];
        let mut cin = c + w + 2 * w;
        for (i, &out) in widths.iter().enumerate() {
            let k = if i >= 5 - ups && i < 5 { 4 } else { 3 };
            total += cin * out * k * k;
            total += if i == 5 { out } else { 2 * out };
            cin = out;
        }
        total
    }

    #[test]
    fn parameter_counts_follow_layer_sizes() {
        for res in [32, 64, 128] {
            for w in [2, 8] {
                let arch = Arch::new(res, w).unwrap();
                for v in [OneStepVariant::Full, OneStepVariant::Merged] {
                    let net = OneStepGenerator::new(arch, v);
                    let weights = net.init::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0));
                    let want = expected_params(res, w, v.prior_channels());
                    assert_eq!(net.num_params(), want);
                    assert_eq!(weights.params.num_elements(), want);
                }
            }
        }
        let arch = Arch::new(32, 8).unwrap();
        let full = OneStepGenerator::new(arch, OneStepVariant::Full).num_params();
        let merged = OneStepGenerator::new(arch, OneStepVariant::Merged).num_params();
        // three extra prior channels feed the 3×3 prior conv and the first deconv
        assert_eq!(full - merged, 3 * 8 * 9 + 3 * 64 * 9);
    }

    #[test]
    fn one_step_contracts() {
        let arch = Arch::new(32, 4).unwrap();
        let m = map(1);
        for v in [OneStepVariant::Full, OneStepVariant::Merged] {
            let net = OneStepGenerator::new(arch, v);
            let w = net.init::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0));
            let prior = v.prior(&m).unwrap();
            let z = LatentNoise::sample(3);
            let img = one_step_generate(&z, &prior, &design(), &net, &w).unwrap();
            assert_eq!(img.dims(), (32, 32));
            assert_eq!(img, one_step_generate(&z, &prior, &design(), &net, &w).unwrap());
            let wrong = Array3::zeros((8, 8, 11 - v.prior_channels()));
            assert!(matches!(
                one_step_generate(&z, &wrong, &design(), &net, &w),
                Err(Error::PriorShapeMismatch { .. })
            ));
        }
    }

    #[test]
    fn non_compositional_differs_only_by_head() {
        let arch = Arch::new(32, 4).unwrap();
        let comp = ImageGenerator::new(arch);
        let plain = ImageGenerator::non_compositional(arch);
        let mut cw = comp.init::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0));
        let mut pw = plain.init::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0));
        let shared: Vec<_> = cw.params.names().filter(|n| !comp.head_names().contains(n)).cloned().collect();
        let plain_names: Vec<_> = pw.params.names().filter(|n| !plain.head_names().contains(n)).cloned().collect();
        assert_eq!(shared, plain_names);
        cw.zero(&comp.head_names());
        pw.zero(&plain.head_names());
        let (m, z) = (map(2), LatentNoise::sample(4));
        let a = compose(&generate_texture_channels(&z, &m, &design(), &comp, &cw), &m, ComposeMode::Hard).unwrap();
        let b = noncomp_generate(&z, &m, &design(), &plain, &pw);
        assert_eq!(a, b);
    }
}
