//! Floating-point scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Scalar type the numeric kernels are generic over: `f32` or `f64`.
///
/// `Float` already carries `NumCast`, so the usual num-traits idiom
/// `T::from(x).unwrap()` converts literals and counters.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + NumAssign + Debug + Display + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}
