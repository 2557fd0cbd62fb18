use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssignOps};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type for the numeric kernels. Everything here is
/// satisfied by `f32` and `f64`; the blanket impl picks them up.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + ScalarOperand + Sum + Debug + Display + Send + Sync + 'static
{
    /// Conversion from an `f64` literal or intermediate. Ordinary finite
    /// values always convert for the supported types.
    fn real(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to Scalar")
    }

    /// Conversion from a count (sample sizes, dimensions).
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to Scalar")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + NumAssignOps
        + ScalarOperand
        + Sum
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
