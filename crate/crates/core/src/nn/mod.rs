//! Minimal tensor autodiff used by every network in the crate.
//!
//! Tensors are `ndarray` arrays in `[N, C, H, W]` layout. Everything is
//! generic over [`Real`] so that training runs in `f32` while gradient
//! checks run the same code in `f64`.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod norm;
pub mod ops;
pub mod params;

pub use adam::Adam;
pub use conv::Window;
pub use graph::{Gradients, Graph, Tensor, Var};
pub use ops::{compose_regions, concat_channels};
pub use params::{Bound, Mode, ParamSet};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}
