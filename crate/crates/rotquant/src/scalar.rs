//! Scalar abstraction: everything numeric in this crate is generic over a
//! real floating-point type.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::Serialize;

/// Real scalar the numeric core is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Serialize
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` used by generators and file IO.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Serialize
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
