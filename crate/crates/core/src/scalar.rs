//! Scalar abstraction shared by the tensor engine, the encoder and the losses.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating-point scalar usable by every differentiable component.
///
/// Blanket-implemented for `f32` and `f64`. Double precision is the reference
/// type: gradient-check tolerances and checkpoint byte-exactness are stated
/// for `f64`.
pub trait Real:
    Float + NumAssign + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("real scalar converts to f64")
    }

    /// Name written into checkpoint manifests.
    fn dtype_name() -> &'static str;
}

impl Real for f64 {
    fn dtype_name() -> &'static str {
        "f64"
    }
}

impl Real for f32 {
    fn dtype_name() -> &'static str {
        "f32"
    }
}
