//! Scalar abstraction: every numeric routine in this crate is written against
//! [`Scalar`] so the same code runs in `f32` or `f64`.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable in the dense linear algebra kernels.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Sum
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for tolerances and literals.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 literal converts to any Scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
