use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("pixel ({row}, {col}) sums to {sum}, not 1")]
    NonSimplex { row: usize, col: usize, sum: f64 },

    #[error("negative entry {value} at ({row}, {col}, {channel})")]
    NegativeEntry {
        row: usize,
        col: usize,
        channel: usize,
        value: f64,
    },

    #[error("{what}: value {value} outside {range}")]
    OutOfRange {
        what: String,
        value: f64,
        range: String,
    },

    #[error("map of {height}x{width} is smaller than {min}x{min}")]
    TooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("caption is empty")]
    EmptyCaption,

    #[error("mask at ({row}, {col}) is not one-hot")]
    NonOneHot { row: usize, col: usize },

    #[error("dataset is empty")]
    DatasetEmpty,

    #[error("non-finite loss in {stage} training at epoch {epoch}, step {step} (loss_d={loss_d}, loss_g={loss_g})")]
    NonFiniteLoss {
        stage: String,
        epoch: usize,
        step: usize,
        loss_d: f64,
        loss_g: f64,
    },

    #[error("checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("checkpoint holds stage `{found}`, expected `{expected}`")]
    StageMismatch { expected: String, found: String },

    #[error("segmentation missing for record {id}: {}", .path.display())]
    MissingSegmentation { id: String, path: PathBuf },

    #[error("caption missing for record {id}")]
    CaptionMissing { id: String },

    #[error("{}: palette index {value} outside 0..=6", .file.display())]
    PaletteViolation { file: PathBuf, value: u8 },

    #[error("prior has shape {actual}, expected {expected}")]
    PriorShapeMismatch { expected: String, actual: String },

    #[error("need at least 2 ids to build swap pairs, got {0}")]
    TooFewIds(usize),

    #[error("average precision needs at least one positive label")]
    NoPositives,

    #[error("ranks for item `{item}` are not a permutation of 1..={methods}")]
    InvalidPermutation { item: String, methods: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed dataset entry {}: {reason}", .path.display())]
    Dataset { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("png: {0}")]
    Png(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<png::EncodingError> for Error {
    fn from(e: png::EncodingError) -> Self {
        Error::Png(e.to_string())
    }
}

impl From<png::DecodingError> for Error {
    fn from(e: png::DecodingError) -> Self {
        Error::Png(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_str(shape: &[usize]) -> String {
    format!("{shape:?}")
}
