pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod image_gan;
pub mod nets;
pub mod nn;
pub mod pngio;
pub mod pipeline;
pub mod preprocess;
pub mod shape_gan;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
