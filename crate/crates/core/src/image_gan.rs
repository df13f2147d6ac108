//! Stage two: per-region texture channels rendered from noise, the
//! segmentation map and the design coding, then composed by the map.

use ndarray::{s, Array3, Array4, ArrayD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_str, Error, Result};
use crate::nets::{Arch, CondProjector, Decoder, Discriminator, DownEncoder, Weights};
use crate::nn::{compose_regions, concat_channels, Bound, Graph, Mode, Real, Var};
use crate::shape_gan::{design_rows, noise_rows, segmap_batch};
use crate::tensor::{stack_hwc, unstack_hwc};
use crate::types::{
    argmax_labels, DesignCoding, ImageRGB, Label, LatentNoise, SegMap, NUM_LABELS,
};

pub const RGB: usize = 3;

/// Seven `m × n × 3` texture channels, one per class, entries in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureChannels {
    data: Array4<f32>,
}

impl TextureChannels {
    pub fn new(data: Array4<f32>) -> Result<Self> {
        let s = data.shape();
        if s[0] != NUM_LABELS || s[3] != RGB || s[1] == 0 || s[2] == 0 {
            return Err(Error::ShapeMismatch {
                expected: "[7, m, n, 3]".into(),
                actual: shape_str(s),
            });
        }
        if let Some(&v) = data.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::OutOfRange {
                what: "texture channel".into(),
                value: v as f64,
                range: "[-1, 1]".into(),
            });
        }
        Ok(TextureChannels { data })
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }

    /// Channel `l` as an `m × n × 3` array.
    pub fn channel(&self, l: usize) -> Array3<f32> {
        self.data.index_axis(Axis(0), l).to_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComposeMode {
    /// Each pixel takes the channel of its (one-hot) label.
    Hard,
    /// Probability-weighted sum over channels.
    Soft,
}

/// Renders an image from texture channels and region masks.
pub fn compose(channels: &TextureChannels, masks: &SegMap, mode: ComposeMode) -> Result<ImageRGB> {
    let (m, n) = channels.dims();
    if masks.dims() != (m, n) {
        return Err(Error::ShapeMismatch {
            expected: format!("[{m}, {n}, 7]"),
            actual: shape_str(masks.probs().shape()),
        });
    }
    let p = masks.probs();
    let c = channels.data();
    let mut out = Array3::<f32>::zeros((m, n, RGB));
    match mode {
        ComposeMode::Hard => {
            for i in 0..m {
                for j in 0..n {
                    let lane = p.slice(s![i, j, ..]);
                    let on: Vec<usize> = (0..NUM_LABELS).filter(|&l| lane[l] == 1.0).collect();
                    let rest_zero = lane.iter().all(|&v| v == 0.0 || v == 1.0);
                    if on.len() != 1 || !rest_zero {
                        return Err(Error::NonOneHot { row: i, col: j });
                    }
                    for k in 0..RGB {
                        out[[i, j, k]] = c[[on[0], i, j, k]];
                    }
                }
            }
        }
        ComposeMode::Soft => {
            for i in 0..m {
                for j in 0..n {
                    for k in 0..RGB {
                        let v: f32 = (0..NUM_LABELS).map(|l| p[[i, j, l]] * c[[l, i, j, k]]).sum();
                        out[[i, j, k]] = v.clamp(-1.0, 1.0);
                    }
                }
            }
        }
    }
    ImageRGB::new(out)
}

/// Copies the hair and face pixels of `original` (by `original_map`) over `generated`.
pub fn replace_head(generated: &ImageRGB, original: &ImageRGB, original_map: &SegMap) -> Result<ImageRGB> {
    let dims = generated.dims();
    if original.dims() != dims || original_map.dims() != dims {
        return Err(Error::ShapeMismatch {
            expected: format!("[{}, {}]", dims.0, dims.1),
            actual: format!(
                "original {:?}, map {:?}",
                original.dims(),
                original_map.dims()
            ),
        });
    }
    let labels = argmax_labels(original_map);
    let mut out = generated.pixels().clone();
    for ((i, j), &l) in labels.indexed_iter() {
        if Label::from_index(l as usize).is_some_and(Label::is_head) {
            out.slice_mut(s![i, j, ..]).assign(&original.pixels().slice(s![i, j, ..]));
        }
    }
    ImageRGB::new(out)
}

/// Generator emitting texture channels (compositional) or a single image.
#[derive(Debug, Clone)]
pub struct ImageGenerator {
    pub arch: Arch,
    pub proj: CondProjector,
    pub encoder: DownEncoder,
    pub decoder: Decoder,
    pub compositional: bool,
}

impl ImageGenerator {
    pub fn new(arch: Arch) -> Self {
        Self::build(arch, true)
    }

    /// Same network with a plain RGB head and no region composition.
    pub fn non_compositional(arch: Arch) -> Self {
        Self::build(arch, false)
    }

    fn build(arch: Arch, compositional: bool) -> Self {
        let pc = arch.proj_channels();
        let encoder = DownEncoder::new("gen.seg", arch, NUM_LABELS);
        let cout = if compositional { NUM_LABELS * RGB } else { RGB };
        let decoder = Decoder::new("gen", arch, encoder.out_channels() + pc, cout);
        ImageGenerator {
            arch,
            proj: CondProjector::new("gen", pc),
            encoder,
            decoder,
            compositional,
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Weights<F> {
        let mut w = Weights::default();
        self.proj.init(&mut w, rng);
        self.encoder.init(&mut w, rng);
        self.decoder.init(&mut w, rng);
        w
    }

    pub fn num_params(&self) -> usize {
        self.proj.num_params() + self.encoder.num_params() + self.decoder.num_params()
    }

    pub fn head_names(&self) -> Vec<String> {
        self.decoder.head_names()
    }

    /// Texture channels `[N, 7, 3, m, m]` in `[-1, 1]` (compositional only).
    pub fn channels<'g, F: Real>(
        &self,
        b: &Bound<'g, F>,
        z: Var<'g, F>,
        map: Var<'g, F>,
        design: Var<'g, F>,
    ) -> Var<'g, F> {
        assert!(self.compositional, "channels() needs the compositional head");
        let raw = self.raw(b, z, map, design).tanh();
        let s = raw.shape();
        raw.reshape(&[s[0], NUM_LABELS, RGB, s[2], s[3]])
    }

    fn raw<'g, F: Real>(&self, b: &Bound<'g, F>, z: Var<'g, F>, map: Var<'g, F>, design: Var<'g, F>) -> Var<'g, F> {
        let projected = self.proj.forward(b, z, design);
        let encoded = self.encoder.forward(b, map);
        self.decoder.forward(b, concat_channels(&[encoded, projected]))
    }

    /// Images `[N, 3, m, m]`; compositional nets compose by `masks`.
    pub fn forward<'g, F: Real>(
        &self,
        b: &Bound<'g, F>,
        z: Var<'g, F>,
        map: Var<'g, F>,
        design: Var<'g, F>,
        masks: Var<'g, F>,
    ) -> Var<'g, F> {
        if self.compositional {
            compose_regions(self.channels(b, z, map, design), masks)
        } else {
            self.raw(b, z, map, design).tanh()
        }
    }
}

/// Sees the image stacked with the full-resolution map.
#[derive(Debug, Clone)]
pub struct ImageDiscriminator {
    pub arch: Arch,
    pub net: Discriminator,
}

impl ImageDiscriminator {
    pub fn new(arch: Arch) -> Self {
        ImageDiscriminator {
            arch,
            net: Discriminator::new("disc", arch, RGB + NUM_LABELS),
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
        image: Var<'g, F>,
        map: Var<'g, F>,
        design: Var<'g, F>,
    ) -> Var<'g, F> {
        self.net.forward(b, concat_channels(&[image, map]), design)
    }
}

/// `[N, 3, m, n]` tensor of a batch of images.
pub fn image_batch<F: Real>(images: &[&ImageRGB]) -> ArrayD<F> {
    let arrays: Vec<_> = images.iter().map(|i| i.pixels()).collect();
    stack_hwc(&arrays)
}

/// Texture channels for one input in inference mode.
pub fn generate_texture_channels(
    z: &LatentNoise,
    map: &SegMap,
    design: &DesignCoding,
    net: &ImageGenerator,
    weights: &Weights<f32>,
) -> TextureChannels {
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &weights.params, &weights.buffers, Mode::Eval, false);
    let out = net.channels(
        &b,
        g.constant(noise_rows(&[z])),
        g.constant(segmap_batch(&[map])),
        g.constant(design_rows(&[design])),
    );
    let v = out.value();
    let (m, n) = map.dims();
    let data = Array4::from_shape_fn((NUM_LABELS, m, n, RGB), |(l, i, j, k)| v[[0, l, k, i, j]]);
    TextureChannels::new(data).expect("tanh output lies in [-1, 1]")
}

/// Single image from a non-compositional generator.
pub fn generate_plain_image(
    z: &LatentNoise,
    map: &SegMap,
    design: &DesignCoding,
    net: &ImageGenerator,
    weights: &Weights<f32>,
) -> ImageRGB {
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &weights.params, &weights.buffers, Mode::Eval, false);
    let maps = g.constant(segmap_batch(&[map]));
    let out = net.forward(
        &b,
        g.constant(noise_rows(&[z])),
        maps,
        g.constant(design_rows(&[design])),
        maps,
    );
    ImageRGB::new(unstack_hwc(&out.value(), 0)).expect("tanh output lies in [-1, 1]")
}

/// Probability that `(image, map, design)` is a real training tuple.
pub fn discriminate_image(
    image: &ImageRGB,
    map: &SegMap,
    design: &DesignCoding,
    net: &ImageDiscriminator,
    weights: &Weights<f32>,
) -> f32 {
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &weights.params, &weights.buffers, Mode::Eval, false);
    net.forward(
        &b,
        g.constant(image_batch(&[image])),
        g.constant(segmap_batch(&[map])),
        g.constant(design_rows(&[design])),
    )
    .scalar()
}
