//! Test-time path: constraint → shape map → texture channels → composition
//! → head replacement, plus interpolation walks and image grids.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::baselines::OneStepVariant;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::evaluation::{derangement, mean_iou, SwapGenerator};
use crate::image_gan::{compose, generate_plain_image, generate_texture_channels, replace_head, ComposeMode, ImageGenerator};
use crate::preprocess::{constraint_from_segmap, design_coding_from_parts, extract_attributes};
use crate::shape_gan::generate_shape;
use crate::synth::record_seed;
use crate::training::{one_step_variant, Stage, StageNets};
use crate::types::{
    argmax_labels, Attributes, DesignCoding, ImageRGB, Label, LatentNoise, PersonRecord, SegMap, SpatialConstraint,
};

/// Per-stage noise seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub shape: u64,
    pub image: u64,
}

impl Seeds {
    pub fn from_seed(seed: u64) -> Self {
        Seeds {
            shape: record_seed(seed, 0),
            image: record_seed(seed, 1),
        }
    }
}

/// Every network input of one pipeline run, split by stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInput {
    pub constraint: SpatialConstraint,
    pub shape_noise: Array1<f32>,
    pub shape_design: Array1<f32>,
    pub image_noise: Array1<f32>,
    pub image_design: Array1<f32>,
    /// Source photo and map; hair and face are copied from them.
    pub original: ImageRGB,
    pub original_map: SegMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Soft map from the shape stage.
    pub shape_map: SegMap,
    pub image: ImageRGB,
}

/// Shape checkpoint plus an image (or non-compositional) checkpoint.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub shape: Checkpoint,
    pub image: Checkpoint,
}

fn expect_stage(ckpt: &Checkpoint, allowed: &[Stage]) -> Result<()> {
    if allowed.contains(&ckpt.stage()) {
        return Ok(());
    }
    Err(Error::StageMismatch {
        expected: allowed.iter().map(|s| s.name()).collect::<Vec<_>>().join("|"),
        found: ckpt.stage().to_string(),
    })
}

impl Pipeline {
    pub fn new(shape: Checkpoint, image: Checkpoint) -> Result<Self> {
        expect_stage(&shape, &[Stage::Shape])?;
        expect_stage(&image, &[Stage::Image, Stage::NonComp])?;
        if shape.arch().resolution != image.arch().resolution {
            return Err(Error::ShapeMismatch {
                expected: format!("resolution {}", shape.arch().resolution),
                actual: format!("resolution {}", image.arch().resolution),
            });
        }
        Ok(Pipeline { shape, image })
    }

    pub fn load(shape: &Path, image: &Path) -> Result<Self> {
        Pipeline::new(Checkpoint::load(shape)?, Checkpoint::load(image)?)
    }

    pub fn resolution(&self) -> usize {
        self.shape.arch().resolution
    }

    /// Network inputs for redressing `source` as `caption`.
    pub fn inputs(&self, source: &PersonRecord, caption: &str, seeds: Seeds) -> Result<PipelineInput> {
        if source.dims() != (self.resolution(), self.resolution()) {
            return Err(Error::ShapeMismatch {
                expected: format!("{0}x{0} input", self.resolution()),
                actual: format!("{}x{}", source.dims().0, source.dims().1),
            });
        }
        let attrs = extract_attributes(source);
        Ok(PipelineInput {
            constraint: constraint_from_segmap(&source.segmap)?,
            shape_noise: LatentNoise::sample(seeds.shape).values().clone(),
            shape_design: self.shape.design(&attrs, caption)?.values().clone(),
            image_noise: LatentNoise::sample(seeds.image).values().clone(),
            image_design: self.image.design(&attrs, caption)?.values().clone(),
            original: source.image.clone(),
            original_map: source.segmap.clone(),
        })
    }

    pub fn run(&self, input: &PipelineInput) -> Result<PipelineOutput> {
        let shape_map = match self.shape.nets() {
            StageNets::Shape(net, _) => generate_shape(
                &LatentNoise::new(input.shape_noise.clone())?,
                &input.constraint,
                &DesignCoding::blended(input.shape_design.clone())?,
                &net,
                &self.shape.generator,
            ),
            _ => unreachable!("checked in Pipeline::new"),
        };
        let masks = SegMap::from_labels(&argmax_labels(&shape_map))?;
        let z = LatentNoise::new(input.image_noise.clone())?;
        let design = DesignCoding::blended(input.image_design.clone())?;
        let rendered = match self.image.nets() {
            StageNets::Image(net, _) => render(&net, &z, &masks, &design, &self.image)?,
            _ => unreachable!("checked in Pipeline::new"),
        };
        let image = replace_head(&rendered, &input.original, &input.original_map)?;
        Ok(PipelineOutput { shape_map, image })
    }

    /// Redresses `source` as described by `caption`.
    pub fn infer(&self, source: &PersonRecord, caption: &str, seeds: Seeds) -> Result<PipelineOutput> {
        self.run(&self.inputs(source, caption, seeds)?)
    }
}

fn render(
    net: &ImageGenerator,
    z: &LatentNoise,
    masks: &SegMap,
    design: &DesignCoding,
    ckpt: &Checkpoint,
) -> Result<ImageRGB> {
    if net.compositional {
        let channels = generate_texture_channels(z, masks, design, net, &ckpt.generator);
        compose(&channels, masks, ComposeMode::Hard)
    } else {
        Ok(generate_plain_image(z, masks, design, net, &ckpt.generator))
    }
}

/// Full test-time path for a photo, its map and a caption.
pub fn infer_pipeline(
    image: ImageRGB,
    segmap: SegMap,
    caption: &str,
    attributes: Attributes,
    seeds: Seeds,
    pipeline: &Pipeline,
) -> Result<(SegMap, ImageRGB)> {
    let source = PersonRecord::new(image, segmap, caption, attributes)?;
    let out = pipeline.infer(&source, caption, seeds)?;
    Ok((out.shape_map, out.image))
}

impl SwapGenerator for Pipeline {
    fn name(&self) -> String {
        match self.image.stage() {
            Stage::NonComp => "Non-Compositional".into(),
            _ => "Two-stage".into(),
        }
    }

    fn generate(&self, source: &PersonRecord, target: &PersonRecord, seed: u64) -> Result<ImageRGB> {
        Ok(self.infer(source, &target.caption, Seeds::from_seed(seed))?.image)
    }
}

/// A one-step baseline checkpoint used as a swap generator.
#[derive(Debug, Clone)]
pub struct OneStepModel {
    pub checkpoint: Checkpoint,
    pub variant: OneStepVariant,
}

impl OneStepModel {
    pub fn new(checkpoint: Checkpoint) -> Result<Self> {
        let variant = one_step_variant(checkpoint.stage()).ok_or_else(|| Error::StageMismatch {
            expected: "one-step-8-7|one-step-8-4".into(),
            found: checkpoint.stage().to_string(),
        })?;
        Ok(OneStepModel { checkpoint, variant })
    }

    pub fn infer(&self, source: &PersonRecord, caption: &str, seed: u64) -> Result<ImageRGB> {
        let prior = self.variant.prior(&source.segmap)?;
        let design = self.checkpoint.design(&extract_attributes(source), caption)?;
        let z = LatentNoise::sample(Seeds::from_seed(seed).image);
        match self.checkpoint.nets() {
            StageNets::OneStep(net, _) => {
                crate::baselines::one_step_generate(&z, &prior, &design, &net, &self.checkpoint.generator)
            }
            _ => unreachable!("checked in OneStepModel::new"),
        }
    }
}

impl SwapGenerator for OneStepModel {
    fn name(&self) -> String {
        self.variant.name().to_owned()
    }

    fn generate(&self, source: &PersonRecord, target: &PersonRecord, seed: u64) -> Result<ImageRGB> {
        self.infer(source, &target.caption, seed)
    }
}

/// Which stage's inputs an interpolation walk moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WalkMode {
    Shape,
    Texture,
    Both,
}

impl WalkMode {
    pub const ALL: [WalkMode; 3] = [WalkMode::Shape, WalkMode::Texture, WalkMode::Both];

    pub fn name(self) -> &'static str {
        match self {
            WalkMode::Shape => "shape",
            WalkMode::Texture => "texture",
            WalkMode::Both => "both",
        }
    }
}

impl fmt::Display for WalkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WalkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WalkMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode `{s}` (shape|texture|both)")))
    }
}

/// `(1 - t) a + t b`, exact at both ends and wherever `a == b`.
pub fn lerp(a: f32, b: f32, t: f32) -> f32 {
    if t == 0.0 || a == b {
        a
    } else if t == 1.0 {
        b
    } else {
        (1.0 - t) * a + t * b
    }
}

fn lerp_array<D: ndarray::Dimension>(a: &ndarray::Array<f32, D>, b: &ndarray::Array<f32, D>, t: f32) -> ndarray::Array<f32, D> {
    Zip::from(a).and(b).map_collect(|&x, &y| lerp(x, y, t))
}

fn lerp_hwc(a: &Array3<f32>, b: &Array3<f32>, t: f32) -> Array3<f32> {
    lerp_array(a, b, t)
}

/// Inputs at position `t` between `a` and `b`; stages not selected by
/// `mode` keep `a`'s inputs.
pub fn interpolate_inputs(a: &PipelineInput, b: &PipelineInput, mode: WalkMode, t: f32) -> Result<PipelineInput> {
    let mut out = a.clone();
    if matches!(mode, WalkMode::Shape | WalkMode::Both) {
        out.constraint = SpatialConstraint::new(lerp_hwc(a.constraint.probs(), b.constraint.probs(), t))?;
        out.shape_noise = lerp_array(&a.shape_noise, &b.shape_noise, t);
        out.shape_design = lerp_array(&a.shape_design, &b.shape_design, t);
    }
    if matches!(mode, WalkMode::Texture | WalkMode::Both) {
        out.image_noise = lerp_array(&a.image_noise, &b.image_noise, t);
        out.image_design = lerp_array(&a.image_design, &b.image_design, t);
        out.original = ImageRGB::new(lerp_hwc(a.original.pixels(), b.original.pixels(), t))?;
        out.original_map = SegMap::new(lerp_hwc(a.original_map.probs(), b.original_map.probs(), t))?;
    }
    Ok(out)
}

/// `steps` evenly spaced frames from `a` to `b` (inclusive).
pub fn interpolation_walk(
    pipeline: &Pipeline,
    a: &PipelineInput,
    b: &PipelineInput,
    mode: WalkMode,
    steps: usize,
) -> Result<Vec<PipelineOutput>> {
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    (0..steps)
        .map(|i| {
            let t = if steps == 1 { 0.0 } else { i as f32 / (steps - 1) as f32 };
            pipeline.run(&interpolate_inputs(a, b, mode, t)?)
        })
        .collect()
}

/// Tiles rows of equally sized images with a one-pixel white gutter.
pub fn tile(rows: &[Vec<ImageRGB>]) -> Result<ImageRGB> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::InvalidConfig("empty grid".into()))?;
    let (h, w) = first.dims();
    let cols = rows.iter().map(Vec::len).max().unwrap();
    let (gh, gw) = (rows.len() * (h + 1) - 1, cols * (w + 1) - 1);
    let mut out = Array3::from_elem((gh, gw, 3), 1.0f32);
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if img.dims() != (h, w) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{h}x{w} tiles"),
                    actual: format!("{}x{}", img.dims().0, img.dims().1),
                });
            }
            let (y, x) = (r * (h + 1), c * (w + 1));
            out.slice_mut(ndarray::s![y..y + h, x..x + w, ..]).assign(img.pixels());
        }
    }
    ImageRGB::new(out)
}

/// Shape-map rendering of a soft map: argmax labels as colours in `[-1, 1]`.
pub fn segmap_preview(map: &SegMap) -> ImageRGB {
    let labels = argmax_labels(map);
    let (m, n) = labels.dim();
    let px = Array3::from_shape_fn((m, n, 3), |(i, j, c)| {
        crate::types::byte_to_unit(crate::pngio::LABEL_PALETTE[labels[[i, j]] as usize][c])
    });
    ImageRGB::new(px).expect("palette bytes map into [-1, 1]")
}

/// Mean IoU of {background, hair, face} between generated and true maps,
/// once with each record's own constraint and once with a deranged one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adherence {
    pub matched: f64,
    pub shuffled: f64,
}

pub fn head_adherence(shape: &Checkpoint, records: &[PersonRecord], seed: u64) -> Result<Adherence> {
    expect_stage(shape, &[Stage::Shape])?;
    let net = match shape.nets() {
        StageNets::Shape(net, _) => net,
        _ => unreachable!(),
    };
    let perm = derangement(records.len(), seed)?;
    let classes = [Label::Background as u8, Label::Hair as u8, Label::Face as u8];
    let (mut matched, mut shuffled) = (0.0, 0.0);
    for (i, r) in records.iter().enumerate() {
        let truth = argmax_labels(&r.segmap);
        let design = design_coding_from_parts(&extract_attributes(r), shape.encode_caption(&r.caption)?.as_slice().unwrap())?;
        let z = LatentNoise::sample(record_seed(seed, i));
        for (constraint_of, acc) in [(r, &mut matched), (&records[perm[i]], &mut shuffled)] {
            let c = constraint_from_segmap(&constraint_of.segmap)?;
            let map = generate_shape(&z, &c, &design, &net, &shape.generator);
            *acc += mean_iou(&argmax_labels(&map), &truth, &classes);
        }
    }
    let n = records.len() as f64;
    Ok(Adherence {
        matched: matched / n,
        shuffled: shuffled / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthesize;
    use crate::training::{train_stage, TrainConfig};

    fn ckpt(stage: Stage, records: &[PersonRecord]) -> Checkpoint {
        let cfg = TrainConfig {
            stage,
            epochs: 1,
            batch_size: 2,
            width: 4,
            ..TrainConfig::default()
        };
        train_stage(&cfg, records).unwrap().checkpoint
    }

    fn setup() -> (Pipeline, Vec<PersonRecord>) {
        let records: Vec<_> = synthesize(6, 11, 32).into_iter().map(|(_, r)| r).collect();
        let p = Pipeline::new(ckpt(Stage::Shape, &records), ckpt(Stage::Image, &records)).unwrap();
        (p, records)
    }

    #[test]
    fn deterministic_and_keeps_head() {
        let (p, rs) = setup();
        let seeds = Seeds::from_seed(3);
        let a = p.infer(&rs[0], &rs[1].caption, seeds).unwrap();
        let b = p.infer(&rs[0], &rs[1].caption, seeds).unwrap();
        assert_eq!(a, b);
        let labels = argmax_labels(&rs[0].segmap);
        for ((i, j), &l) in labels.indexed_iter() {
            if Label::from_index(l as usize).unwrap().is_head() {
                for c in 0..3 {
                    assert_eq!(a.image.pixels()[[i, j, c]], rs[0].image.pixels()[[i, j, c]]);
                }
            }
        }
        assert!(a.image.pixels().iter().all(|v| (-1.0..=1.0).contains(v)));
        let (map, img) = infer_pipeline(rs[0].image.clone(), rs[0].segmap.clone(), &rs[1].caption, rs[0].attributes, seeds, &p).unwrap();
        assert_eq!((map, img), (a.shape_map, a.image));
    }

    #[test]
    fn caption_changes_garments_not_head() {
        let (p, rs) = setup();
        let seeds = Seeds::from_seed(4);
        let other = rs.iter().find(|r| r.caption != rs[0].caption).unwrap();
        let a = p.infer(&rs[0], &rs[0].caption, seeds).unwrap();
        let b = p.infer(&rs[0], &other.caption, seeds).unwrap();
        let labels = argmax_labels(&rs[0].segmap);
        let mut garment_diff = 0;
        for ((i, j), &l) in labels.indexed_iter() {
            let same = (0..3).all(|c| a.image.pixels()[[i, j, c]] == b.image.pixels()[[i, j, c]]);
            if Label::from_index(l as usize).unwrap().is_head() {
                assert!(same);
            } else if !same {
                garment_diff += 1;
            }
        }
        assert!(garment_diff > 0);
    }

    #[test]
    fn stage_checks() {
        let (p, rs) = setup();
        assert!(matches!(Pipeline::new(p.image.clone(), p.shape.clone()), Err(Error::StageMismatch { .. })));
        assert!(OneStepModel::new(p.shape.clone()).is_err());
        let one = OneStepModel::new(ckpt(Stage::OneStep84, &rs)).unwrap();
        let a = one.generate(&rs[0], &rs[1], 2).unwrap();
        assert_eq!(a, one.generate(&rs[0], &rs[1], 2).unwrap());
        let nc = Pipeline::new(p.shape.clone(), ckpt(Stage::NonComp, &rs)).unwrap();
        assert_eq!(nc.name(), "Non-Compositional");
        nc.generate(&rs[0], &rs[1], 2).unwrap();
    }

    #[test]
    fn walks_hit_their_endpoints() {
        let (p, rs) = setup();
        let a = p.inputs(&rs[0], &rs[0].caption, Seeds::from_seed(1)).unwrap();
        let b = p.inputs(&rs[1], &rs[2].caption, Seeds::from_seed(2)).unwrap();
        let out_a = p.run(&a).unwrap();
        let out_b = p.run(&b).unwrap();
        for mode in WalkMode::ALL {
            let frames = interpolation_walk(&p, &a, &b, mode, 4).unwrap();
            assert_eq!(frames.len(), 4);
            assert_eq!(frames[0], out_a);
            if mode == WalkMode::Both {
                assert_eq!(frames[3], out_b);
            }
        }
        let mid = interpolate_inputs(&a, &b, WalkMode::Both, 0.5).unwrap();
        for (m, (x, y)) in mid.shape_noise.iter().zip(a.shape_noise.iter().zip(b.shape_noise.iter())) {
            assert_eq!(*m, 0.5 * x + 0.5 * y);
        }
    }

    #[test]
    fn shape_walk_keeps_texture_inputs() {
        let (p, rs) = setup();
        let a = p.inputs(&rs[0], &rs[0].caption, Seeds::from_seed(1)).unwrap();
        let b = p.inputs(&rs[3], &rs[4].caption, Seeds::from_seed(2)).unwrap();
        let net = match p.image.nets() {
            StageNets::Image(n, _) => n,
            _ => unreachable!(),
        };
        let mut first = None;
        for t in [0.0, 0.3, 0.7, 1.0] {
            let x = interpolate_inputs(&a, &b, WalkMode::Shape, t).unwrap();
            assert_eq!(
                (&x.image_noise, &x.image_design, &x.original),
                (&a.image_noise, &a.image_design, &a.original)
            );
            // channels under one fixed mask do not move
            let ch = generate_texture_channels(
                &LatentNoise::new(x.image_noise.clone()).unwrap(),
                &rs[0].segmap,
                &DesignCoding::blended(x.image_design.clone()).unwrap(),
                &net,
                &p.image.generator,
            );
            match &first {
                None => first = Some(ch),
                Some(f) => assert_eq!(f, &ch),
            }
        }
    }

    #[test]
    fn tiling() {
        let a = ImageRGB::new(Array3::from_elem((2, 3, 3), -1.0)).unwrap();
        let g = tile(&[vec![a.clone(), a.clone()], vec![a.clone()]]).unwrap();
        assert_eq!(g.dims(), (5, 7));
        assert_eq!(g.pixels()[[2, 0, 0]], 1.0);
        assert_eq!(g.pixels()[[3, 0, 0]], -1.0);
        assert_eq!(g.pixels()[[3, 4, 0]], 1.0);
        assert!(tile(&[]).is_err());
    }

    #[test]
    fn adherence_runs() {
        let (p, rs) = setup();
        let a = head_adherence(&p.shape, &rs, 0).unwrap();
        assert!((0.0..=1.0).contains(&a.matched) && (0.0..=1.0).contains(&a.shuffled));
    }
}
