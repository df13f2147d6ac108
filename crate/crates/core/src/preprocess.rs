//! Conditioning inputs derived from a [`PersonRecord`]: the merged,
//! downsampled body layout and the design coding.

use ndarray::{s, Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::types::{
    argmax_labels, DesignCoding, Label, PersonRecord, SegMap, SpatialConstraint, ATTRIBUTE_DIM,
    CONSTRAINT_SIZE, NUM_LABELS, NUM_MERGED_LABELS, TEXT_DIM,
};

/// Source classes feeding each merged channel.
pub const MERGE_GROUPS: [&[Label]; NUM_MERGED_LABELS] = [
    &[Label::Background],
    &[Label::Hair],
    &[Label::Face],
    &[Label::UpperClothes, Label::Bottom, Label::Legs, Label::Arms],
];

/// Collapses the seven classes to background/hair/face/rest.
pub fn merge_labels(map: &SegMap) -> Array3<f32> {
    merge_channels(map.probs()).expect("SegMap always has 7 channels")
}

/// [`merge_labels`] on a raw `m × n × 7` array.
pub fn merge_channels(probs: &Array3<f32>) -> Result<Array3<f32>> {
    let (m, n, c) = probs.dim();
    if c != NUM_LABELS {
        return Err(Error::ShapeMismatch {
            expected: "[m, n, 7]".into(),
            actual: format!("{:?}", probs.shape()),
        });
    }
    let mut out = Array3::zeros((m, n, NUM_MERGED_LABELS));
    for (dst, group) in MERGE_GROUPS.iter().enumerate() {
        let mut lane = out.index_axis_mut(Axis(2), dst);
        for label in group.iter() {
            lane += &probs.index_axis(Axis(2), label.index());
        }
    }
    Ok(out)
}

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Resampling taps for shrinking `input` samples to `output` samples.
///
/// The kernel is stretched by the scale factor so every input sample
/// contributes; taps outside the input are dropped and the remaining
/// weights normalised to sum to one.
pub fn bicubic_taps(input: usize, output: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = input as f64 / output as f64;
    let filter_scale = scale.max(1.0);
    let support = 2.0 * filter_scale;
    (0..output)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(input);
            let mut w: Vec<f64> = (lo..hi)
                .map(|j| cubic_kernel((j as f64 + 0.5 - center) / filter_scale))
                .collect();
            let total: f64 = w.iter().sum();
            for v in &mut w {
                *v /= total;
            }
            (lo, w)
        })
        .collect()
}

fn resample_axis(input: &Array3<f64>, axis: usize, output: usize) -> Array3<f64> {
    let len = input.shape()[axis];
    let taps = bicubic_taps(len, output);
    let mut shape = [input.shape()[0], input.shape()[1], input.shape()[2]];
    shape[axis] = output;
    let mut out = Array3::<f64>::zeros(shape);
    for (o, (start, weights)) in taps.iter().enumerate() {
        let mut dst = out.index_axis_mut(Axis(axis), o);
        for (k, &w) in weights.iter().enumerate() {
            dst.scaled_add(w, &input.index_axis(Axis(axis), start + k));
        }
    }
    out
}

/// Linear bicubic resample of every channel to `8 × 8`, without clamping.
pub fn resample_linear(map: &Array3<f32>) -> Result<Array3<f64>> {
    let (m, n, _) = map.dim();
    if m < CONSTRAINT_SIZE || n < CONSTRAINT_SIZE {
        return Err(Error::TooSmall {
            height: m,
            width: n,
            min: CONSTRAINT_SIZE,
        });
    }
    let wide = map.mapv(|v| v as f64);
    let rows = resample_axis(&wide, 0, CONSTRAINT_SIZE);
    Ok(resample_axis(&rows, 1, CONSTRAINT_SIZE))
}

/// Bicubic downsampling to `8 × 8`, then per-entry clamping to `[0, 1]`
/// and per-pixel renormalisation so every pixel stays on the simplex.
pub fn downsample_bicubic(map: &Array3<f32>) -> Result<Array3<f32>> {
    let mut out = resample_linear(map)?;
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    for mut lane in out.lanes_mut(Axis(2)) {
        let total: f64 = lane.sum();
        if total > 0.0 {
            lane.mapv_inplace(|v| v / total);
        } else {
            // every channel clamped to zero; fall back to uniform
            let c = lane.len() as f64;
            lane.fill(1.0 / c);
        }
    }
    Ok(out.mapv(|v| v as f32))
}

/// `downsample_bicubic(merge_labels(segmap))`.
pub fn build_spatial_constraint(record: &PersonRecord) -> Result<SpatialConstraint> {
    constraint_from_segmap(&record.segmap)
}

pub fn constraint_from_segmap(map: &SegMap) -> Result<SpatialConstraint> {
    SpatialConstraint::new(downsample_bicubic(&merge_labels(map))?)
}

/// Classes counted as visible skin.
pub const SKIN_LABELS: [Label; 3] = [Label::Face, Label::Arms, Label::Legs];

/// Skin value used when no skin pixel exists.
pub const DEFAULT_SKIN: f32 = 0.5;

pub(crate) fn median(values: &mut [f32]) -> f32 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Standard luma of an RGB triple.
pub fn luma(rgb: [f32; 3]) -> f32 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// The ten attribute dims:
/// `[gender, long_hair, sunglasses, hat, skin_R, skin_G, skin_B, skin_Y, height_frac, width_frac]`.
///
/// An empty skin region yields `0.5` for the four skin dims and a warning.
pub fn extract_attributes(record: &PersonRecord) -> Array1<f32> {
    let labels = argmax_labels(&record.segmap);
    let pixels = record.image.pixels();
    let mut out = Array1::<f32>::zeros(ATTRIBUTE_DIM);
    for (i, f) in record.attributes.as_flags().into_iter().enumerate() {
        out[i] = f;
    }

    let mut channels: [Vec<f32>; 3] = Default::default();
    for ((i, j), &l) in labels.indexed_iter() {
        if SKIN_LABELS.iter().any(|s| s.index() == l as usize) {
            for (c, vals) in channels.iter_mut().enumerate() {
                vals.push((pixels[[i, j, c]] + 1.0) / 2.0);
            }
        }
    }
    if channels[0].is_empty() {
        log::warn!("empty skin region; skin colour defaults to {DEFAULT_SKIN}");
        out.slice_mut(s![4..8]).fill(DEFAULT_SKIN);
    } else {
        let rgb = channels.map(|mut v| median(&mut v).clamp(0.0, 1.0));
        out[4] = rgb[0];
        out[5] = rgb[1];
        out[6] = rgb[2];
        out[7] = luma(rgb).clamp(0.0, 1.0);
    }

    let (h, w) = body_extent(&labels);
    let (m, n) = labels.dim();
    out[8] = h as f32 / m as f32;
    out[9] = w as f32 / n as f32;
    out
}

/// Height and width of the bounding box of non-background pixels.
fn body_extent(labels: &Array2<u8>) -> (usize, usize) {
    let mut rows = (usize::MAX, 0usize);
    let mut cols = (usize::MAX, 0usize);
    let mut any = false;
    for ((i, j), &l) in labels.indexed_iter() {
        if l != Label::Background as u8 {
            any = true;
            rows = (rows.0.min(i), rows.1.max(i));
            cols = (cols.0.min(j), cols.1.max(j));
        }
    }
    if !any {
        return (0, 0);
    }
    (rows.1 - rows.0 + 1, cols.1 - cols.0 + 1)
}

/// `[attributes(10) ‖ text_vec(40)]`.
pub fn build_design_coding(record: &PersonRecord, text_vec: &[f32]) -> Result<DesignCoding> {
    design_coding_from_parts(&extract_attributes(record), text_vec)
}

pub fn design_coding_from_parts(attributes: &Array1<f32>, text_vec: &[f32]) -> Result<DesignCoding> {
    if attributes.len() != ATTRIBUTE_DIM {
        return Err(Error::LengthMismatch {
            expected: ATTRIBUTE_DIM,
            actual: attributes.len(),
        });
    }
    if text_vec.len() != TEXT_DIM {
        return Err(Error::LengthMismatch {
            expected: TEXT_DIM,
            actual: text_vec.len(),
        });
    }
    let values: Array1<f32> = attributes.iter().chain(text_vec.iter()).copied().collect();
    DesignCoding::new(values)
}
