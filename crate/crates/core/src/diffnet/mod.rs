//! Compact differentiable regressor.
//!
//! The network is a stack of convolution blocks (3×3 "same" convolution,
//! ReLU, 2×2 average pooling) followed by global average pooling into an
//! embedding vector and a linear regression head. The forward pass records a
//! [`Tape`] borrowing the parameters, so a tape can never outlive or be
//! replayed against parameters that have since been updated.
//!
//! Everything is generic over [`Real`] so that training runs in `f32` while
//! gradient checks run the very same code in `f64`.

mod adam;
pub mod checkpoint;
mod network;
mod params;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use network::{forward, ForwardOutput, Tape};
pub use params::{Gradients, ModelParams, ModelSpec, ParamArray};

/// Floating point type the network can be evaluated in.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }
    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}
