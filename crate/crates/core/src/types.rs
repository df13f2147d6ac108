//! Array-backed domain types shared by every stage of the pipeline.

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_str, Error, Result};

/// Number of segmentation classes.
pub const NUM_LABELS: usize = 7;
/// Number of classes after merging all clothing and limbs into `rest`.
pub const NUM_MERGED_LABELS: usize = 4;
/// Side length of the downsampled spatial constraint.
pub const CONSTRAINT_SIZE: usize = 8;
/// Length of the design coding.
pub const DESIGN_DIM: usize = 50;
/// Leading design-coding dims holding human attributes.
pub const ATTRIBUTE_DIM: usize = 10;
/// Trailing design-coding dims holding the encoded caption.
pub const TEXT_DIM: usize = 40;
/// Length of the latent noise vectors.
pub const NOISE_DIM: usize = 100;
/// Tolerance for per-pixel simplex sums.
pub const SIMPLEX_TOL: f64 = 1e-5;

pub const LABEL_NAMES: [&str; NUM_LABELS] = [
    "background",
    "hair",
    "face",
    "upper-clothes",
    "pants/shorts",
    "legs",
    "arms",
];

pub const MERGED_LABEL_NAMES: [&str; NUM_MERGED_LABELS] = ["background", "hair", "face", "rest"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Hair = 1,
    Face = 2,
    UpperClothes = 3,
    Bottom = 4,
    Legs = 5,
    Arms = 6,
}

impl Label {
    pub const ALL: [Label; NUM_LABELS] = [
        Label::Background,
        Label::Hair,
        Label::Face,
        Label::UpperClothes,
        Label::Bottom,
        Label::Legs,
        Label::Arms,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        LABEL_NAMES[self.index()]
    }

    /// Hair and face are copied back from the source photo after rendering.
    pub fn is_head(self) -> bool {
        matches!(self, Label::Hair | Label::Face)
    }
}

/// RGB image with entries in `[-1, 1]`, stored `height × width × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    pixels: Array3<f32>,
}

impl ImageRGB {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let s = pixels.shape();
        if s[2] != 3 || s[0] == 0 || s[1] == 0 {
            return Err(Error::ShapeMismatch {
                expected: "[m, n, 3]".into(),
                actual: shape_str(s),
            });
        }
        for &v in pixels.iter() {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange {
                    what: "image pixel".into(),
                    value: v as f64,
                    range: "[-1, 1]".into(),
                });
            }
        }
        Ok(ImageRGB { pixels })
    }

    /// Builds from 8-bit RGB rows (`height * width * 3` bytes).
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * 3 {
            return Err(Error::LengthMismatch {
                expected: height * width * 3,
                actual: bytes.len(),
            });
        }
        let pixels = Array3::from_shape_fn((height, width, 3), |(i, j, c)| {
            byte_to_unit(bytes[(i * width + j) * 3 + c])
        });
        ImageRGB::new(pixels)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| unit_to_byte(v)).collect()
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }
}

/// `[0, 255]` byte to `[-1, 1]`.
pub fn byte_to_unit(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// `[-1, 1]` to the nearest byte.
pub fn unit_to_byte(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn check_simplex(probs: &Array3<f32>, channels: usize) -> Result<()> {
    let s = probs.shape();
    if s[2] != channels || s[0] == 0 || s[1] == 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("[m, n, {channels}]"),
            actual: shape_str(s),
        });
    }
    for ((row, col, channel), &v) in probs.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::OutOfRange {
                what: "segmentation probability".into(),
                value: v as f64,
                range: "[0, 1]".into(),
            });
        }
        if v < 0.0 {
            return Err(Error::NegativeEntry {
                row,
                col,
                channel,
                value: v as f64,
            });
        }
        if v > 1.0 {
            return Err(Error::OutOfRange {
                what: "segmentation probability".into(),
                value: v as f64,
                range: "[0, 1]".into(),
            });
        }
    }
    for ((row, col), lane) in probs
        .lanes(Axis(2))
        .into_iter()
        .enumerate()
        .map(|(i, l)| ((i / s[1], i % s[1]), l))
    {
        let sum: f64 = lane.iter().map(|&v| v as f64).sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NonSimplex { row, col, sum });
        }
    }
    Ok(())
}

/// Per-pixel distribution over the seven classes, `m × n × 7`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMap {
    probs: Array3<f32>,
}

/// Validates a probability array as a segmentation map.
pub fn validate_segmap(probs: Array3<f32>) -> Result<SegMap> {
    check_simplex(&probs, NUM_LABELS)?;
    Ok(SegMap { probs })
}

impl SegMap {
    pub fn new(probs: Array3<f32>) -> Result<Self> {
        validate_segmap(probs)
    }

    /// One-hot map from an integer label grid.
    pub fn from_labels(labels: &Array2<u8>) -> Result<Self> {
        let (m, n) = labels.dim();
        let mut probs = Array3::zeros((m, n, NUM_LABELS));
        for ((i, j), &l) in labels.indexed_iter() {
            if l as usize >= NUM_LABELS {
                return Err(Error::OutOfRange {
                    what: "label index".into(),
                    value: l as f64,
                    range: "0..=6".into(),
                });
            }
            probs[[i, j, l as usize]] = 1.0;
        }
        Ok(SegMap { probs })
    }

    pub fn probs(&self) -> &Array3<f32> {
        &self.probs
    }

    pub fn into_probs(self) -> Array3<f32> {
        self.probs
    }

    pub fn height(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn labels(&self) -> [&'static str; NUM_LABELS] {
        LABEL_NAMES
    }

    /// True when every pixel is a simplex vertex.
    pub fn is_one_hot(&self) -> bool {
        self.probs.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Per-pixel index of the largest channel; ties go to the lowest index.
pub fn argmax_labels(map: &SegMap) -> Array2<u8> {
    let (m, n) = map.dims();
    Array2::from_shape_fn((m, n), |(i, j)| argmax_lane(map.probs.slice(ndarray::s![i, j, ..])) as u8)
}

pub(crate) fn argmax_lane(lane: ArrayView1<'_, f32>) -> usize {
    let mut best = 0;
    for (k, &v) in lane.iter().enumerate().skip(1) {
        if v > lane[best] {
            best = k;
        }
    }
    best
}

/// Merged, downsampled body layout: `8 × 8 × 4`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialConstraint {
    probs: Array3<f32>,
}

impl SpatialConstraint {
    pub fn new(probs: Array3<f32>) -> Result<Self> {
        let s = probs.shape();
        if s[0] != CONSTRAINT_SIZE || s[1] != CONSTRAINT_SIZE {
            return Err(Error::ShapeMismatch {
                expected: format!("[{CONSTRAINT_SIZE}, {CONSTRAINT_SIZE}, {NUM_MERGED_LABELS}]"),
                actual: shape_str(s),
            });
        }
        check_simplex(&probs, NUM_MERGED_LABELS)?;
        Ok(SpatialConstraint { probs })
    }

    pub fn probs(&self) -> &Array3<f32> {
        &self.probs
    }

    pub fn into_probs(self) -> Array3<f32> {
        self.probs
    }
}

/// The 50-dim condition vector: 10 attribute dims then 40 text dims.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignCoding {
    values: Array1<f32>,
}

/// Number of binary flags at the start of the attribute slice.
pub const BINARY_ATTRIBUTES: usize = 4;

impl DesignCoding {
    pub fn new(values: Array1<f32>) -> Result<Self> {
        if values.len() != DESIGN_DIM {
            return Err(Error::LengthMismatch {
                expected: DESIGN_DIM,
                actual: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            let ok = if !v.is_finite() {
                false
            } else if i < BINARY_ATTRIBUTES {
                v == 0.0 || v == 1.0
            } else if i < ATTRIBUTE_DIM {
                (0.0..=1.0).contains(&v)
            } else {
                true
            };
            if !ok {
                return Err(Error::OutOfRange {
                    what: format!("design coding dim {i}"),
                    value: v as f64,
                    range: if i < BINARY_ATTRIBUTES {
                        "{0, 1}".into()
                    } else if i < ATTRIBUTE_DIM {
                        "[0, 1]".into()
                    } else {
                        "finite".into()
                    },
                });
            }
        }
        Ok(DesignCoding { values })
    }

    /// A convex blend of valid codings: binary flags may be fractional.
    pub fn blended(values: Array1<f32>) -> Result<Self> {
        let mut probe = values.clone();
        for v in probe.iter_mut().take(BINARY_ATTRIBUTES) {
            *v = if (0.0..=1.0).contains(v) { 0.0 } else { *v };
        }
        DesignCoding::new(probe)?;
        Ok(DesignCoding { values })
    }

    pub fn values(&self) -> &Array1<f32> {
        &self.values
    }

    pub fn attributes(&self) -> ArrayView1<'_, f32> {
        self.values.slice(ndarray::s![..ATTRIBUTE_DIM])
    }

    pub fn text(&self) -> ArrayView1<'_, f32> {
        self.values.slice(ndarray::s![ATTRIBUTE_DIM..])
    }
}

/// Standard Gaussian noise vector of length 100.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoise {
    values: Array1<f32>,
    seed: Option<u64>,
}

impl LatentNoise {
    pub fn new(values: Array1<f32>) -> Result<Self> {
        if values.len() != NOISE_DIM {
            return Err(Error::LengthMismatch {
                expected: NOISE_DIM,
                actual: values.len(),
            });
        }
        Ok(LatentNoise { values, seed: None })
    }

    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..NOISE_DIM)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        LatentNoise {
            values,
            seed: Some(seed),
        }
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        let values = (0..NOISE_DIM).map(|_| StandardNormal.sample(rng)).collect();
        LatentNoise { values, seed: None }
    }

    pub fn values(&self) -> &Array1<f32> {
        &self.values
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// Binary person attributes carried alongside each record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Attributes {
    /// 1 = female, 0 = male.
    pub gender: bool,
    pub long_hair: bool,
    pub sunglasses: bool,
    pub hat: bool,
}

impl Attributes {
    pub fn as_flags(&self) -> [f32; BINARY_ATTRIBUTES] {
        [
            self.gender as u8 as f32,
            self.long_hair as u8 as f32,
            self.sunglasses as u8 as f32,
            self.hat as u8 as f32,
        ]
    }
}

/// One training example: photo, its segmentation, a caption and attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonRecord {
    pub image: ImageRGB,
    pub segmap: SegMap,
    pub caption: String,
    pub attributes: Attributes,
}

impl PersonRecord {
    pub fn new(image: ImageRGB, segmap: SegMap, caption: impl Into<String>, attributes: Attributes) -> Result<Self> {
        if image.dims() != segmap.dims() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", image.dims()),
                actual: format!("{:?}", segmap.dims()),
            });
        }
        let caption = caption.into();
        if caption.trim().is_empty() {
            return Err(Error::EmptyCaption);
        }
        Ok(PersonRecord {
            image,
            segmap,
            caption,
            attributes,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}
